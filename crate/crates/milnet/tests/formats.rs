use std::fs;
use std::path::Path;
use std::process::Command;

use milnet::checkpoint::Checkpoint;
use milnet::config::{self, RunConfig};
use milnet::{dataset, manifest, pgm, report};
use milnet_core::heads::Head;
use milnet_core::image::GrayImage;
use milnet_core::model::{BackboneSpec, ModelParams};
use milnet_core::optim::TrainState;
use milnet_core::synth::SynthSpec;
use milnet_core::train::{self, TrainConfig};

fn write_img(dir: &Path, name: &str, w: usize, h: usize) {
    pgm::write(&dir.join(name), &GrayImage::filled(w, h, 9)).unwrap();
}

fn manifest_err(body: &str) -> String {
    let dir = tempfile::tempdir().unwrap();
    write_img(dir.path(), "a.pgm", 10, 8);
    let path = dir.path().join("m.csv");
    fs::write(&path, body).unwrap();
    manifest::load(&path).unwrap_err().to_string()
}

#[test]
fn manifest_loading() {
    let dir = tempfile::tempdir().unwrap();
    write_img(dir.path(), "a.pgm", 10, 8);
    fs::create_dir(dir.path().join("sub")).unwrap();
    fs::write(dir.path().join("sub/raw.bin"), vec![3u8; 12]).unwrap();
    fs::write(dir.path().join("sub/raw.bin.hdr"), "4 3\n").unwrap();
    let path = dir.path().join("m.csv");
    fs::write(&path, "path,label,x,y,w,h\na.pgm,1,2,2,8,6\nsub/raw.bin,0,,,,\n").unwrap();
    let m = manifest::load(&path).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m.records[0].mass.map(|r| (r.x, r.w)), Some((2, 8)));
    assert_eq!((m.records[1].width, m.records[1].height, m.records[1].mass), (4, 3, None));

    fs::write(&path, "path,label\na.pgm,0\n").unwrap();
    assert_eq!(manifest::load(&path).unwrap().labels(), vec![false]);
}

#[test]
fn manifest_errors_name_the_line() {
    let e = manifest_err("path,label\na.pgm,1\na.pgm,2\n");
    assert!(e.contains(":3:") && e.contains("label"), "{e}");
    let e = manifest_err("path,label\nmissing.pgm,1\n");
    assert!(e.contains(":2:") && e.contains("does not exist"), "{e}");
    let e = manifest_err("path,label,x,y,w,h\na.pgm,1,5,0,6,8\n");
    assert!(e.contains(":2:") && e.contains("(5,0,6,8)"), "{e}");
    let e = manifest_err("file,label\na.pgm,1\n");
    assert!(e.contains("header"), "{e}");
    let e = manifest_err("path,label,x,y,w,h\na.pgm,1,1,1\n");
    assert!(e.contains(":2:"), "{e}");
}

#[test]
fn config_examples() {
    let c = config::parse("head = sparse\nmu = 1e-5\nlambda = 5e-6\n").unwrap();
    assert_eq!(c.train.mil.head, Head::Sparse);
    assert_eq!((c.train.mil.mu, c.train.mil.lambda), (1e-5, 5e-6));
    let e = config::parse("head = max_pool\nk = 8\n").unwrap_err().to_string();
    assert!(e.contains("`k`"), "{e}");
    let e = config::parse("head = max_pool\nmu = 0.1\n").unwrap_err().to_string();
    assert!(e.contains("`mu`"), "{e}");
}

fn tiny_checkpoint(head: Head, steps: u64) -> Checkpoint {
    let mut cfg = TrainConfig::new(BackboneSpec::tiny(), head);
    cfg.seed = 5;
    let mut state = TrainState::new(ModelParams::init(&cfg.backbone, 5).unwrap());
    let img = GrayImage::new(16, 16, (0..256).map(|i| (i * 7 % 256) as u8).collect()).unwrap();
    let weights = milnet_core::heads::BagWeights::UNIT;
    for _ in 0..steps {
        train::train_step(&mut state, &[&img, &img], &[true, false], &cfg, &weights).unwrap();
    }
    Checkpoint {
        run: RunConfig::new(cfg),
        state,
    }
}

#[test]
fn checkpoint_round_trips_bitwise() {
    for head in Head::ALL {
        let c = tiny_checkpoint(head, 3);
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"MILN");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.state.step, 3);

        let img = GrayImage::filled(16, 16, 200);
        let spec = &c.run.train.backbone;
        assert_eq!(
            train::predict(spec, &c.state.params, &[&img]).unwrap(),
            train::predict(spec, &back.state.params, &[&img]).unwrap()
        );
    }
    let bytes = tiny_checkpoint(Head::MaxPool, 1).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn summary_has_aggregate_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    let rows = [
        report::FoldResult { fold: 0, accuracy: 0.5, auc: 1.0 },
        report::FoldResult { fold: 1, accuracy: 1.0, auc: 1.0 },
    ];
    report::write_summary(&p, &rows).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "fold,accuracy,auc");
    assert_eq!(lines[3], format!("mean±std,0.75±{},1±0", (0.125f64).sqrt()));
}

#[test]
fn synthetic_manifest_validates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_pos: 3,
        n_neg: 5,
        ..SynthSpec::default()
    };
    let m = dataset::write_synthetic(&spec, dir.path()).unwrap();
    assert_eq!(m.len(), 8);
    assert_eq!(m.labels().iter().filter(|&&b| b).count(), 3);
    let items = dataset::load(&m, 64).unwrap();
    for it in &items {
        assert_eq!((it.sample.image.width(), it.sample.image.height()), (64, 64));
        if let Some(b) = it.mass {
            assert!(b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= 64.0 + 1e-9 && b.y + b.h <= 64.0 + 1e-9);
        }
    }
    let again = tempfile::tempdir().unwrap();
    dataset::write_synthetic(&spec, again.path()).unwrap();
    for r in &m.records {
        assert_eq!(fs::read(&r.path).unwrap(), fs::read(again.path().join(&r.name)).unwrap());
    }
}

fn milnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_milnet"))
}

#[test]
fn cli_help_lists_config_keys() {
    for args in [vec!["--help"], vec!["cv", "--help"], vec!["train", "--help"]] {
        let out = milnet().args(&args).output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        for (k, _) in config::KEYS {
            assert!(text.contains(&format!("  {k} ")), "{args:?} misses {k}");
        }
    }
}

#[test]
fn cli_rejects_bad_config_before_loading_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "head = max_pool\nk = 8\n").unwrap();
    let out = milnet()
        .args(["cv", "--config"])
        .arg(&cfg)
        .args(["--data", "/nonexistent/manifest.csv", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("`k`") && !err.contains("nonexistent"), "{err}");
}

#[test]
fn cli_end_to_end_small() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.txt"), "size = 32\nn_pos = 5\nn_neg = 15\n").unwrap();
    fs::write(d.join("cfg.txt"), "head = sparse\npreset = tiny\nepochs = 2\n").unwrap();
    let run = |args: &[&str]| {
        let out = milnet().current_dir(d).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["synth", "--spec", "spec.txt", "--out", "data"]);
    run(&["stats", "--data", "data/manifest.csv", "--out", "stats"]);
    assert!(d.join("stats/mass_width.csv").exists());
    run(&["cv", "--config", "cfg.txt", "--data", "data/manifest.csv", "--out", "cv"]);
    let summary = fs::read_to_string(d.join("cv/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);
    assert!(summary.lines().last().unwrap().starts_with("mean±std,"));
    run(&["train", "--config", "cfg.txt", "--data", "data/manifest.csv", "--out", "m.miln"]);
    assert!(d.join("m.miln.metrics.csv").exists());
    run(&["eval", "--ckpt", "m.miln", "--data", "data/manifest.csv", "--out", "eval"]);
    assert!(fs::read_to_string(d.join("eval/roc.csv")).unwrap().starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    let bagged = run(&[
        "bag", "--ckpts", "cv/fold0/checkpoint.miln", "cv/fold1/checkpoint.miln", "--mode", "average", "--data",
        "data/manifest.csv",
    ]);
    assert_eq!(bagged.lines().count(), 21);
    run(&["viz", "--ckpt", "m.miln", "--image", "data/img0000.pgm", "--out", "viz"]);
    let grid = fs::read_to_string(d.join("viz/responses.csv")).unwrap();
    assert_eq!(grid.lines().count(), 4);
    let overlay = pgm::read(&d.join("viz/overlay.pgm")).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (16, 16));
}

#[test]
fn cli_gradcheck_heads() {
    let out = milnet().args(["gradcheck", "--module", "heads", "--draws", "5"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
