//! Central finite-difference checks of the analytic gradients.
//!
//! The numerical side only ever evaluates forward passes. A perturbation
//! whose two evaluations take a different branch at some ReLU, pooling
//! window, sort or clamp ([`Graph::kink_signature`]) is skipped and redrawn,
//! since the difference quotient is meaningless across a kink.
//!
//! [`Graph::kink_signature`]: crate::autodiff::Graph::kink_signature

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::Graph;
use crate::error::Result;
use crate::heads::{self, BagWeights, Head, MilConfig};
use crate::math;
use crate::model::{self, BackboneSpec, ModelParams};
use crate::rng::{self, Purpose, Stream};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f64,
    /// Differences below this are accepted regardless of the relative error.
    pub abs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    fn record(&mut self, what: &dyn Fn() -> String, analytic: f64, numeric: f64, tol: Tolerance) {
        self.checked += 1;
        let diff = math::abs(analytic - numeric);
        let scale = math::abs(analytic).max(math::abs(numeric));
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        if diff > tol.abs {
            self.max_rel_err = self.max_rel_err.max(rel);
        }
        if diff > tol.abs && rel > tol.rel {
            self.failures
                .push(format!("{}: analytic {analytic:e} vs numeric {numeric:e} (rel {rel:e})", what()));
        }
    }

    pub fn merge(&mut self, other: Report) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.failures.extend(other.failures);
    }
}

fn random_labels_weights(rng: &mut Stream) -> BagWeights {
    let w1_patch = rng.gen_range(0.05..0.95);
    BagWeights {
        w1: rng.gen_range(0.2..1.0),
        w0: rng.gen_range(0.2..1.0),
        w1_patch,
        w0_patch: 1.0 - w1_patch,
    }
}

fn random_head_config(head: Head, m: usize, rng: &mut Stream) -> MilConfig {
    MilConfig {
        k: rng.gen_range(1..=m),
        mu: rng.gen_range(0.0..0.5),
        lambda: rng.gen_range(0.0..1e-2),
        ..MilConfig::new(head)
    }
}

/// Loss of one bag evaluated from raw responses, plus the kink fingerprint.
fn bag_value(r: &[f64], positive: bool, cfg: &MilConfig, w: &BagWeights) -> Result<(f64, u64)> {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(r.to_vec()));
    let l = heads::bag_term(&mut g, x, positive, cfg, w)?;
    Ok((g.value(l).item(), g.kink_signature()))
}

/// Loss heads alone: gradients with respect to the response vector.
pub fn check_heads(draws: usize, seed: u64, tol: Tolerance) -> Result<Report> {
    let mut report = Report::default();
    for head in Head::ALL {
        for draw in 0..draws {
            let mut rng = rng::stream(seed, Purpose::GradCheck, head as u64, draw as u64);
            let m = rng.gen_range(1..=12);
            let r: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..0.99)).collect();
            let positive = rng.gen_bool(0.5);
            let cfg = random_head_config(head, m, &mut rng);
            let w = random_labels_weights(&mut rng);
            let eval = heads::evaluate_bag(&r, positive, &cfg, &w)?;
            let (_, base_sig) = bag_value(&r, positive, &cfg, &w)?;
            for i in 0..m {
                let mut plus = r.clone();
                let mut minus = r.clone();
                plus[i] += STEP;
                minus[i] -= STEP;
                let (lp, sp) = bag_value(&plus, positive, &cfg, &w)?;
                let (lm, sm) = bag_value(&minus, positive, &cfg, &w)?;
                if sp != base_sig || sm != base_sig {
                    report.skipped += 1;
                    continue;
                }
                let numeric = (lp - lm) / (2.0 * STEP);
                report.record(
                    &|| format!("{} draw {draw} response {i}", head.name()),
                    eval.grad[i],
                    numeric,
                    tol,
                );
            }
        }
    }
    Ok(report)
}

struct Problem {
    spec: BackboneSpec,
    input: Tensor,
    labels: Vec<bool>,
    cfg: MilConfig,
    weights: BagWeights,
}

impl Problem {
    fn value(&self, params: &ModelParams) -> Result<(f64, u64)> {
        let mut fwd = model::forward(&self.spec, params, self.input.clone())?;
        let loss = heads::objective(&mut fwd, &self.labels, &self.cfg, &self.weights)?;
        Ok((fwd.graph.value(loss).item(), fwd.graph.kink_signature()))
    }

    fn grads(&self, params: &ModelParams) -> Result<(Vec<Tensor>, u64)> {
        let mut fwd = model::forward(&self.spec, params, self.input.clone())?;
        let loss = heads::objective(&mut fwd, &self.labels, &self.cfg, &self.weights)?;
        let sig = fwd.graph.kink_signature();
        let g = fwd.graph.backward(loss)?;
        Ok((fwd.params.iter().map(|&p| g.get(p)).collect(), sig))
    }

    /// Central difference along `dir` applied to parameter tensor `t`.
    fn directional(&self, params: &ModelParams, t: usize, dir: &[f64], base_sig: u64) -> Result<Option<f64>> {
        let shifted = |sign: f64| {
            let mut p = params.clone();
            let (_, tensor) = p.iter_mut().nth(t).expect("tensor index");
            for (v, d) in tensor.data_mut().iter_mut().zip(dir) {
                *v += sign * STEP * d;
            }
            p
        };
        let (lp, sp) = self.value(&shifted(1.0))?;
        let (lm, sm) = self.value(&shifted(-1.0))?;
        if sp != base_sig || sm != base_sig {
            return Ok(None);
        }
        Ok(Some((lp - lm) / (2.0 * STEP)))
    }
}

/// End-to-end check of one head on `spec` with a two-image batch per draw.
///
/// Each draw re-initializes the parameters and the input images, then checks
/// `coords` single coordinates spread over all tensors and one random
/// direction per parameter tensor, which covers every parameter.
pub fn check_backbone(
    spec: &BackboneSpec,
    head: Head,
    draws: usize,
    coords: usize,
    seed: u64,
    tol: Tolerance,
) -> Result<Report> {
    const MAX_TRIES: usize = 8;
    let mut report = Report::default();
    let m = spec.instances()?;
    let s = spec.input_size;
    for draw in 0..draws {
        let mut rng = rng::stream(seed, Purpose::GradCheck, 100 + head as u64, draw as u64);
        let params = ModelParams::init(spec, rng.gen())?;
        let data: Vec<f64> = (0..2 * s * s).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut cfg = random_head_config(head, m, &mut rng);
        cfg.lambda = rng.gen_range(0.0..1e-2);
        let problem = Problem {
            spec: spec.clone(),
            input: Tensor::new(alloc::vec![2, 1, s, s], data)?,
            labels: alloc::vec![true, false],
            cfg,
            weights: random_labels_weights(&mut rng),
        };
        let (grads, base_sig) = problem.grads(&params)?;
        let names: Vec<String> = params.iter().map(|(n, _)| String::from(n)).collect();

        for c in 0..coords {
            let t = c % params.len();
            let len = grads[t].len();
            for _ in 0..MAX_TRIES {
                let i = rng.gen_range(0..len);
                let mut dir = alloc::vec![0.0; len];
                dir[i] = 1.0;
                match problem.directional(&params, t, &dir, base_sig)? {
                    Some(numeric) => {
                        report.record(&|| format!("{} draw {draw} {}[{i}]", head.name(), names[t]), grads[t].data()[i], numeric, tol);
                        break;
                    }
                    None => report.skipped += 1,
                }
            }
        }

        for (t, name) in names.iter().enumerate() {
            let len = grads[t].len();
            for _ in 0..MAX_TRIES {
                let dir: Vec<f64> = (0..len).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
                match problem.directional(&params, t, &dir, base_sig)? {
                    Some(numeric) => {
                        let analytic: f64 = grads[t].data().iter().zip(&dir).map(|(g, d)| g * d).sum();
                        report.record(&|| format!("{} draw {draw} {name} direction", head.name()), analytic, numeric, tol);
                        break;
                    }
                    None => report.skipped += 1,
                }
            }
        }
    }
    Ok(report)
}
