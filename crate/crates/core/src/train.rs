//! Training loop, validation-based model selection and `k` selection.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::heads::{self, bag_weights, BagWeights, Head, MilConfig};
use crate::image::GrayImage;
use crate::metrics;
use crate::model::{self, BackboneSpec, ModelParams, ResponseMap};
use crate::optim::{AdamConfig, TrainState};
use crate::preprocess::{self, AugmentConfig};
use crate::rng::{self, Purpose};

/// Batch size used for inference-only passes.
const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub backbone: BackboneSpec,
    pub mil: MilConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Candidate `k` values for label assignment.
    pub k_grid: Vec<usize>,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn new(backbone: BackboneSpec, head: Head) -> Self {
        TrainConfig {
            backbone,
            mil: MilConfig::new(head),
            adam: AdamConfig::default(),
            epochs: 50,
            batch_size: 8,
            seed: 0,
            k_grid: alloc::vec![4, 8, 12, 16],
            augment: AugmentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.backbone.instances()?;
        self.mil.validate(m)?;
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return Err(Error::Config("adam betas must be in [0, 1) and eps positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if let Some(&bad) = self.k_grid.iter().find(|&&k| k == 0 || k > m) {
            return Err(Error::Config(format!("k = {bad} in k_grid exceeds {m} instances per bag")));
        }
        self.augment.validate()
    }
}

/// A preprocessed training or evaluation image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Stable identifier; seeds the per-sample augmentation streams.
    pub id: u64,
    pub image: GrayImage,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Objective summed over the epoch's steps, divided by the number of
    /// training bags.
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// State after the epoch with the best validation AUC.
    pub best: TrainState,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub log: Vec<EpochMetrics>,
}

/// Weights for the configured head, estimated on the training bags.
pub fn training_weights(samples: &[Sample], cfg: &TrainConfig) -> Result<BagWeights> {
    let n_pos = samples.iter().filter(|s| s.positive).count();
    let m = cfg.backbone.instances()?;
    let k = if cfg.mil.head == Head::LabelAssign { cfg.mil.k } else { 1 };
    bag_weights(n_pos, samples.len(), k, m, cfg.mil.weight_mode)
}

/// One optimizer step on a batch. Returns the batch objective.
pub fn train_step(
    state: &mut TrainState,
    images: &[&GrayImage],
    labels: &[bool],
    cfg: &TrainConfig,
    weights: &BagWeights,
) -> Result<f64> {
    let mut fwd = model::forward_images(&cfg.backbone, &state.params, images)?;
    let loss = heads::objective(&mut fwd, labels, &cfg.mil, weights)?;
    let value = fwd.graph.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: state.step as usize,
            loss: value,
        });
    }
    let grads = fwd.graph.backward(loss)?.params();
    state.adam_step(&grads, &cfg.adam)?;
    Ok(value)
}

/// Response maps for every image, computed in fixed-size chunks.
pub fn predict(spec: &BackboneSpec, params: &ModelParams, images: &[&GrayImage]) -> Result<Vec<ResponseMap>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        out.extend(model::forward_images(spec, params, chunk)?.response_maps());
    }
    Ok(out)
}

/// Bag probabilities (top response of each map).
pub fn scores(spec: &BackboneSpec, params: &ModelParams, samples: &[Sample]) -> Result<Vec<f64>> {
    let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
    predict(spec, params, &images)?
        .iter()
        .map(|r| heads::infer_bag(&model::rank_responses(r)?))
        .collect()
}

fn check_sets(train: &[Sample], val: &[Sample]) -> Result<()> {
    let pos = train.iter().filter(|s| s.positive).count();
    if pos == 0 || pos == train.len() {
        return Err(Error::DegenerateClasses {
            positives: pos,
            total: train.len(),
        });
    }
    let vpos = val.iter().filter(|s| s.positive).count();
    if vpos == 0 || vpos == val.len() {
        return Err(Error::DegenerateClasses {
            positives: vpos,
            total: val.len(),
        });
    }
    if let Some(s) = val.iter().find(|v| train.iter().any(|t| t.id == v.id)) {
        return Err(Error::Invalid(format!("sample {} is in both training and validation sets", s.id)));
    }
    Ok(())
}

pub fn train(train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(None, train, val, cfg, &mut |_| {})
}

/// Trains from `init` (or a fresh seeded initialization) and reports every
/// epoch to `on_epoch`.
pub fn train_from(
    init: Option<TrainState>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_sets(train, val)?;
    let weights = training_weights(train, cfg)?;
    let mut state = match init {
        Some(s) => {
            s.params.check_against(&cfg.backbone)?;
            s
        }
        None => TrainState::new(ModelParams::init(&cfg.backbone, cfg.seed)?),
    };
    let val_labels: Vec<bool> = val.iter().map(|s| s.positive).collect();
    let mut best: Option<(TrainState, usize, f64)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Shuffle, epoch as u64, 0));
        let mut total = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<GrayImage> = batch
                .iter()
                .map(|&i| {
                    let s = &train[i];
                    let mut r = rng::stream(cfg.seed, Purpose::Augment, epoch as u64, s.id);
                    preprocess::augment(&s.image, &cfg.augment, &mut r)
                })
                .collect();
            let images: Vec<&GrayImage> = augmented.iter().collect();
            let labels: Vec<bool> = batch.iter().map(|&i| train[i].positive).collect();
            let loss = train_step(&mut state, &images, &labels, cfg, &weights).map_err(|e| match e {
                Error::NonFiniteLoss { loss, .. } => Error::NonFiniteLoss { epoch, step, loss },
                other => other,
            })?;
            total += loss;
        }
        let val_scores = scores(&cfg.backbone, &state.params, val)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: total / train.len() as f64,
            val_auc: metrics::auc(&val_scores, &val_labels)?,
            val_acc: metrics::accuracy(&val_scores, &val_labels, 0.5)?,
        };
        on_epoch(&metrics);
        log.push(metrics);
        if best.as_ref().map_or(true, |(_, _, auc)| metrics.val_auc > *auc) {
            best = Some((state.clone(), epoch, metrics.val_auc));
        }
    }
    let (best, best_epoch, best_val_auc) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_auc,
        log,
    })
}

/// Trains one label-assignment model per `k` in the grid and keeps the one
/// with the best validation AUC; ties go to the smaller `k`.
pub fn select_k(train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<(usize, TrainOutcome)> {
    select_k_with(train, val, cfg, &mut |_, _| {})
}

pub fn select_k_with(
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &EpochMetrics),
) -> Result<(usize, TrainOutcome)> {
    if cfg.mil.head != Head::LabelAssign {
        return Err(Error::Config("k selection only applies to the label_assign head".into()));
    }
    let m = cfg.backbone.instances()?;
    let mut grid = cfg.k_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::Config("k_grid is empty".into()));
    }
    if let Some(&bad) = grid.iter().find(|&&k| k == 0 || k > m) {
        return Err(Error::Config(format!("k = {bad} in k_grid exceeds {m} instances per bag")));
    }
    let mut best: Option<(usize, TrainOutcome)> = None;
    for k in grid {
        let mut c = cfg.clone();
        c.mil.k = k;
        let outcome = train_from(None, train, val, &c, &mut |e| on_epoch(k, e))?;
        if best.as_ref().map_or(true, |(_, b)| outcome.best_val_auc > b.best_val_auc) {
            best = Some((k, outcome));
        }
    }
    Ok(best.expect("non-empty grid"))
}
