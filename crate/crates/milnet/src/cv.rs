//! Training and cross-validation drivers that write their artifacts to disk.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use milnet_core::folds::{self, Split};
use milnet_core::heads::Head;
use milnet_core::metrics;
use milnet_core::train::{self, EpochMetrics, Sample, TrainOutcome};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, Item};
use crate::error::{io, Result};
use crate::report::{self, FoldResult};
use crate::viz;

pub const N_FOLDS: usize = 5;

/// Trains one model. With `select` the label-assignment `k` is picked from
/// the grid on `val`; the returned config records the `k` actually used.
pub fn fit(
    run: &RunConfig,
    train_set: &[Sample],
    val: &[Sample],
    select: bool,
    on_epoch: &mut dyn FnMut(usize, &EpochMetrics),
) -> Result<(RunConfig, TrainOutcome)> {
    let mut chosen = run.clone();
    let outcome = if select {
        let (k, outcome) = train::select_k_with(train_set, val, &run.train, on_epoch)?;
        chosen.train.mil.k = k;
        outcome
    } else {
        let k = run.train.mil.k;
        train::train_from(None, train_set, val, &run.train, &mut |e| on_epoch(k, e))?
    };
    if chosen.train.mil.head == Head::LabelAssign {
        chosen.k_set = true;
    }
    Ok((chosen, outcome))
}

/// Whether `cv` selects `k` on each fold's validation split.
pub fn selects_k(run: &RunConfig) -> bool {
    run.train.mil.head == Head::LabelAssign && !run.k_set
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutput {
    pub result: FoldResult,
    pub k: usize,
    pub best_epoch: usize,
    pub test_scores: Vec<f64>,
    pub test_labels: Vec<bool>,
    /// Positive test bags with a mass box, and how many of them have their
    /// strongest response cell on the mass.
    pub mass_bags: usize,
    pub localized: usize,
}

/// Runs one fold and writes `checkpoint.miln`, `metrics.csv`, `roc.csv` and
/// `scores.csv` into `dir`.
pub fn run_fold(
    run: &RunConfig,
    items: &[Item],
    split: &Split,
    dir: &Path,
    log: &(dyn Fn(&str) + Sync),
) -> Result<FoldOutput> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let fold = split.test_fold;
    let train_set = dataset::samples(&dataset::pick(items, &split.train));
    let val = dataset::samples(&dataset::pick(items, &split.val));
    let test = dataset::pick(items, &split.test);

    let select = selects_k(run);
    let (chosen, outcome) = fit(run, &train_set, &val, select, &mut |k, e| {
        log(&format!(
            "fold {fold} k {k} epoch {} train_loss {:.6} val_auc {:.4} val_acc {:.4}",
            e.epoch, e.train_loss, e.val_auc, e.val_acc
        ))
    })?;
    let spec = &chosen.train.backbone;
    let params = &outcome.best.params;

    let test_samples = dataset::samples(&test);
    let labels = dataset::labels(&test);
    let names: Vec<String> = test.iter().map(|i| i.name.clone()).collect();
    let scores = train::scores(spec, params, &test_samples)?;
    let result = FoldResult {
        fold,
        accuracy: metrics::accuracy(&scores, &labels, 0.5)?,
        auc: metrics::auc(&scores, &labels)?,
    };

    let with_mass: Vec<&Item> = test.iter().filter(|i| i.sample.positive && i.mass.is_some()).collect();
    let images: Vec<_> = with_mass.iter().map(|i| &i.sample.image).collect();
    let maps = train::predict(spec, params, &images)?;
    let localized = maps
        .iter()
        .zip(&with_mass)
        .filter(|(m, i)| viz::localizes(m, i.mass.as_ref().expect("filtered"), spec.input_size))
        .count();

    Checkpoint {
        run: chosen.clone(),
        state: outcome.best.clone(),
    }
    .save(&dir.join("checkpoint.miln"))?;
    report::write_metrics(&dir.join("metrics.csv"), &outcome.log)?;
    report::write_roc(&dir.join("roc.csv"), &metrics::roc_curve(&scores, &labels)?)?;
    report::write_scores(&dir.join("scores.csv"), &names, &labels, &scores)?;
    log(&format!(
        "fold {fold} done: k {} best epoch {} test accuracy {:.4} auc {:.4}",
        chosen.train.mil.k, outcome.best_epoch, result.accuracy, result.auc
    ));
    Ok(FoldOutput {
        result,
        k: chosen.train.mil.k,
        best_epoch: outcome.best_epoch,
        test_scores: scores,
        test_labels: labels,
        mass_bags: with_mass.len(),
        localized,
    })
}

/// Full protocol: stratified folds, rotation over every test fold with the
/// next fold as validation, per-fold directories `fold<i>` and `summary.csv`.
/// Folds run on up to `workers` threads; results do not depend on it.
pub fn run_cv(
    run: &RunConfig,
    items: &[Item],
    out: &Path,
    workers: usize,
    log: &(dyn Fn(&str) + Sync),
) -> Result<Vec<FoldOutput>> {
    run.train.validate()?;
    std::fs::create_dir_all(out).map_err(io(out))?;
    let plan = folds::make_folds(&dataset::labels(items), N_FOLDS, run.train.seed)?;
    let splits = plan.splits();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<FoldOutput>>>> = Mutex::new((0..splits.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, splits.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(split) = splits.get(i) else { break };
                let r = run_fold(run, items, split, &out.join(format!("fold{i}")), log);
                let failed = r.is_err();
                results.lock().expect("no panics while locked")[i] = Some(r);
                if failed {
                    next.store(splits.len(), Ordering::SeqCst);
                }
            });
        }
    });
    let outputs = results
        .into_inner()
        .expect("no panics while locked")
        .into_iter()
        .flatten()
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<FoldResult> = outputs.iter().map(|o| o.result).collect();
    report::write_summary(&out.join("summary.csv"), &rows)?;
    Ok(outputs)
}
