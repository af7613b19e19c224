//! CSV outputs.

use std::path::Path;

use milnet_core::metrics::{self, RocCurve};
use milnet_core::stats::{Bin, DatasetStats};
use milnet_core::train::EpochMetrics;

use crate::error::{io, Result};

/// Label of the aggregate row in summary files.
pub const AGGREGATE: &str = "mean±std";

fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<std::fs::File>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(io(path))
}

pub fn write_metrics(path: &Path, log: &[EpochMetrics]) -> Result<()> {
    let mut w = writer(path, &["epoch", "train_loss", "val_auc", "val_acc"])?;
    for e in log {
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_auc.to_string(), e.val_acc.to_string()])?;
    }
    finish(w, path)
}

pub fn write_roc(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut w = writer(path, &["fpr", "tpr", "threshold"])?;
    for p in &roc.points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    finish(w, path)
}

pub fn write_scores(path: &Path, names: &[String], labels: &[bool], scores: &[f64]) -> Result<()> {
    let mut w = writer(path, &["path", "label", "score"])?;
    for ((n, &y), s) in names.iter().zip(labels).zip(scores) {
        w.write_record([n.clone(), u8::from(y).to_string(), s.to_string()])?;
    }
    finish(w, path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub auc: f64,
}

/// `fold,accuracy,auc` rows plus a final `mean±std` row whose cells are
/// `<mean>±<sample std>`.
pub fn write_summary(path: &Path, rows: &[FoldResult]) -> Result<()> {
    let mut w = writer(path, &["fold", "accuracy", "auc"])?;
    for r in rows {
        w.write_record([r.fold.to_string(), r.accuracy.to_string(), r.auc.to_string()])?;
    }
    let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let auc: Vec<f64> = rows.iter().map(|r| r.auc).collect();
    let cell = |v: &[f64]| {
        let (m, s) = metrics::mean_std(v);
        format!("{m}±{s}")
    };
    w.write_record([AGGREGATE.to_string(), cell(&acc), cell(&auc)])?;
    finish(w, path)
}

/// Single-row `accuracy,auc` file for one evaluated model or ensemble.
pub fn write_eval_summary(path: &Path, accuracy: f64, auc: f64) -> Result<()> {
    let mut w = writer(path, &["accuracy", "auc"])?;
    w.write_record([accuracy.to_string(), auc.to_string()])?;
    finish(w, path)
}

pub fn write_histogram(path: &Path, bins: &[Bin]) -> Result<()> {
    let mut w = writer(path, &["start", "end", "count"])?;
    for b in bins {
        w.write_record([b.start.to_string(), b.end.to_string(), b.count.to_string()])?;
    }
    finish(w, path)
}

/// Histograms plus a `key,value` summary into `dir`.
pub fn write_stats(dir: &Path, s: &DatasetStats) -> Result<()> {
    write_histogram(&dir.join("image_width.csv"), &s.image_width)?;
    write_histogram(&dir.join("image_height.csv"), &s.image_height)?;
    write_histogram(&dir.join("mass_width.csv"), &s.mass_width)?;
    write_histogram(&dir.join("mass_height.csv"), &s.mass_height)?;
    let path = dir.join("summary.csv");
    let mut w = writer(&path, &["key", "value"])?;
    for (k, v) in [
        ("images", s.n_images as f64),
        ("masses", s.n_masses as f64),
        ("mean_image_width", s.mean_image_width),
        ("mean_image_height", s.mean_image_height),
        ("mean_mass_width", s.mean_mass_width),
        ("mean_mass_height", s.mean_mass_height),
        ("mass_area_fraction", s.mass_area_fraction),
    ] {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    finish(w, &path)
}
