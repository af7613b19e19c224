//! Flat `key = value` run configuration. `#` starts a comment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use milnet_core::heads::{Head, WeightMode};
use milnet_core::model::BackboneSpec;
use milnet_core::synth::SynthSpec;
use milnet_core::train::TrainConfig;

use crate::error::{io, Error, Result};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("head", "max_pool | label_assign | sparse (default max_pool)"),
    ("k", "top patches labeled like the bag; label_assign only (default: chosen from k_grid)"),
    ("k_grid", "comma-separated candidates for k; label_assign only (default 4,8,12,16)"),
    ("mu", "L1 weight on the responses; sparse only (default 1e-5)"),
    ("lambda", "L2 weight decay (default 1e-5, sparse 5e-6)"),
    ("lr", "Adam learning rate (default 0.001)"),
    ("epochs", "training epochs (default 50)"),
    ("batch", "images per step (default 8, 16 with preset = paper)"),
    ("seed", "root seed for init, shuffling, augmentation and folds (default 0)"),
    ("preset", "backbone: desk | paper | tiny (default desk)"),
    ("layers", "custom backbone, e.g. conv:8:3:2:1,relu,pool:2:2 (needs input_size)"),
    ("input_size", "side of the square network input in pixels"),
    ("weight_mode", "bag weights: balanced | literal (default balanced)"),
    ("flip_prob", "horizontal flip probability (default 0.5)"),
    ("shift_frac", "max translation as a fraction of the side (default 0.1)"),
    ("rotate_deg", "max rotation in degrees (default 45)"),
    ("cutout_frac", "cutout side as a fraction of the side (default 50/224)"),
];

/// Renders [`KEYS`] for `--help`.
pub fn keys_help() -> String {
    let mut s = String::from("Config keys (`key = value`, one per line):\n");
    for (k, d) in KEYS {
        let _ = writeln!(s, "  {k:<12} {d}");
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// True when a label-assignment `k` is fixed rather than left to
    /// selection over `k_grid`. Always false for the other heads.
    pub k_set: bool,
}

impl RunConfig {
    /// Wraps a config whose `k` (if any) is fixed.
    pub fn new(train: TrainConfig) -> Self {
        let k_set = train.mil.head == Head::LabelAssign;
        RunConfig { train, k_set }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::new(BackboneSpec::desk(), Head::MaxPool),
            k_set: false,
        }
    }
}

/// `(line, key, value)` triples in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`, found `{line}`", i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!("line {}: empty key or value", i + 1)));
        }
        if let Some((first, ..)) = out.iter().find(|(_, key, _)| key == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}` (first set on line {first})", i + 1)));
        }
        out.push((i + 1, k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value `{v}` for `{key}`")))
}

pub fn parse(text: &str) -> Result<RunConfig> {
    from_pairs(&parse_pairs(text)?)
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn from_pairs(pairs: &[(usize, String, String)]) -> Result<RunConfig> {
    let known: BTreeSet<&str> = KEYS.iter().map(|(k, _)| *k).collect();
    if let Some((line, k, _)) = pairs.iter().find(|(_, k, _)| !known.contains(k.as_str())) {
        return Err(Error::Config(format!("line {line}: unknown key `{k}`")));
    }
    let get = |key: &str| pairs.iter().find(|(_, k, _)| k == key).map(|(l, _, v)| (*l, v.as_str()));

    let head = match get("head") {
        Some((l, v)) => Head::parse(v).map_err(|e| Error::Config(format!("line {l}: {e}")))?,
        None => Head::MaxPool,
    };
    for (key, owner) in [("k", Head::LabelAssign), ("k_grid", Head::LabelAssign), ("mu", Head::Sparse)] {
        if let Some((l, _)) = get(key) {
            if head != owner {
                return Err(Error::Config(format!(
                    "line {l}: `{key}` only applies to head = {}, not {}",
                    owner.name(),
                    head.name()
                )));
            }
        }
    }

    let preset = get("preset").map_or("desk", |(_, v)| v);
    let mut backbone = BackboneSpec::preset(preset).map_err(|e| Error::Config(e.to_string()))?;
    if let Some((l, v)) = get("input_size") {
        backbone.input_size = value(l, "input_size", v)?;
    }
    match (get("layers"), get("input_size")) {
        (Some((l, v)), Some(_)) => {
            backbone.layers = BackboneSpec::parse_layers(v).map_err(|e| Error::Config(format!("line {l}: {e}")))?
        }
        (Some((l, _)), None) => return Err(Error::Config(format!("line {l}: `layers` needs `input_size`"))),
        _ => {}
    }

    let mut cfg = TrainConfig::new(backbone, head);
    if preset == "paper" {
        cfg.batch_size = 16;
    }
    let mut k_set = false;
    if let Some((l, v)) = get("k") {
        cfg.mil.k = value(l, "k", v)?;
        k_set = true;
    }
    if let Some((l, v)) = get("k_grid") {
        cfg.k_grid = v
            .split(',')
            .map(|t| value(l, "k_grid", t.trim()))
            .collect::<Result<_>>()?;
        if cfg.k_grid.is_empty() {
            return Err(Error::Config(format!("line {l}: k_grid is empty")));
        }
    }
    if let Some((l, v)) = get("mu") {
        cfg.mil.mu = value(l, "mu", v)?;
    }
    if let Some((l, v)) = get("lambda") {
        cfg.mil.lambda = value(l, "lambda", v)?;
    }
    if let Some((l, v)) = get("weight_mode") {
        cfg.mil.weight_mode = WeightMode::parse(v).map_err(|e| Error::Config(format!("line {l}: {e}")))?;
    }
    if let Some((l, v)) = get("lr") {
        cfg.adam.lr = value(l, "lr", v)?;
    }
    if let Some((l, v)) = get("epochs") {
        cfg.epochs = value(l, "epochs", v)?;
    }
    if let Some((l, v)) = get("batch") {
        cfg.batch_size = value(l, "batch", v)?;
    }
    if let Some((l, v)) = get("seed") {
        cfg.seed = value(l, "seed", v)?;
    }
    if let Some((l, v)) = get("flip_prob") {
        cfg.augment.flip_prob = value(l, "flip_prob", v)?;
    }
    if let Some((l, v)) = get("shift_frac") {
        cfg.augment.shift_frac = value(l, "shift_frac", v)?;
    }
    if let Some((l, v)) = get("rotate_deg") {
        cfg.augment.rotate_deg_max = value(l, "rotate_deg", v)?;
    }
    if let Some((l, v)) = get("cutout_frac") {
        cfg.augment.cutout_frac = value(l, "cutout_frac", v)?;
    }
    if !(cfg.mil.mu >= 0.0 && cfg.mil.lambda >= 0.0) {
        return Err(Error::Config("mu and lambda must be non-negative".into()));
    }
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(RunConfig { train: cfg, k_set })
}

/// Serializes every setting so that [`parse`] rebuilds an equal config.
pub fn to_text(run: &RunConfig) -> String {
    let c = &run.train;
    let mut s = String::new();
    let _ = writeln!(s, "head = {}", c.mil.head.name());
    if c.mil.head == Head::LabelAssign {
        if run.k_set {
            let _ = writeln!(s, "k = {}", c.mil.k);
        }
        let grid: Vec<String> = c.k_grid.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "k_grid = {}", grid.join(","));
    }
    if c.mil.head == Head::Sparse {
        let _ = writeln!(s, "mu = {:?}", c.mil.mu);
    }
    let _ = writeln!(s, "lambda = {:?}", c.mil.lambda);
    let _ = writeln!(s, "weight_mode = {}", c.mil.weight_mode.name());
    let _ = writeln!(s, "lr = {:?}", c.adam.lr);
    let _ = writeln!(s, "epochs = {}", c.epochs);
    let _ = writeln!(s, "batch = {}", c.batch_size);
    let _ = writeln!(s, "seed = {}", c.seed);
    let _ = writeln!(s, "input_size = {}", c.backbone.input_size);
    let _ = writeln!(s, "layers = {}", c.backbone.layers_string());
    let _ = writeln!(s, "flip_prob = {:?}", c.augment.flip_prob);
    let _ = writeln!(s, "shift_frac = {:?}", c.augment.shift_frac);
    let _ = writeln!(s, "rotate_deg = {:?}", c.augment.rotate_deg_max);
    let _ = writeln!(s, "cutout_frac = {:?}", c.augment.cutout_frac);
    s
}

/// Keys of a synthetic dataset spec file.
pub const SYNTH_KEYS: &[(&str, &str)] = &[
    ("size", "image side in pixels (default 80)"),
    ("n_pos", "positive images (default 40)"),
    ("n_neg", "negative images (default 160)"),
    ("mass_frac", "mass side as a fraction of the image side (default 0.14)"),
    ("lift", "mass intensity above the tissue level (default 60)"),
    ("noise", "uniform pixel noise amplitude (default 8)"),
    ("seed", "generator seed (default 2017)"),
];

pub fn parse_synth(text: &str) -> Result<SynthSpec> {
    let mut spec = SynthSpec::default();
    for (l, k, v) in parse_pairs(text)? {
        match k.as_str() {
            "size" => spec.size = value(l, &k, &v)?,
            "n_pos" => spec.n_pos = value(l, &k, &v)?,
            "n_neg" => spec.n_neg = value(l, &k, &v)?,
            "mass_frac" => spec.mass_frac = value(l, &k, &v)?,
            "lift" => spec.lift = value(l, &k, &v)?,
            "noise" => spec.noise = value(l, &k, &v)?,
            "seed" => spec.seed = value(l, &k, &v)?,
            _ => return Err(Error::Config(format!("line {l}: unknown key `{k}`"))),
        }
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}
