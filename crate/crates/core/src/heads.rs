//! The three multi-instance losses and the shared inference rule.
//!
//! All losses are defined on the descending-ranked responses `r'` of a bag:
//!
//! * max pooling: `-w_y log p(y)` with `p(1) = r'_1`, `p(0) = 1 - r'_1`;
//! * label assignment: the top `k` patches take the bag label, the rest are
//!   negative, `-sum_{j<=k} w'_y log p(y | r'_j) - sum_{j>k} w'_0 log(1 - r'_j)`;
//! * sparse: the max pooling term plus `mu * ||r'||_1`.
//!
//! The batch objective sums the per-bag terms and adds `lambda/2 ||theta||^2`
//! once.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::model::{Forward, RankedResponses};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    MaxPool,
    LabelAssign,
    Sparse,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::MaxPool, Head::LabelAssign, Head::Sparse];

    pub fn name(self) -> &'static str {
        match self {
            Head::MaxPool => "max_pool",
            Head::LabelAssign => "label_assign",
            Head::Sparse => "sparse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "max_pool" => Ok(Head::MaxPool),
            "label_assign" => Ok(Head::LabelAssign),
            "sparse" => Ok(Head::Sparse),
            other => Err(Error::Config(format!(
                "unknown head `{other}` (max_pool, label_assign, sparse)"
            ))),
        }
    }
}

/// How the bag-level class weights are derived from the class prevalence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightMode {
    /// `w1 = 1 - prevalence`, `w0 = prevalence`: the minority class gets the
    /// larger weight.
    Balanced,
    /// `w1 = prevalence`, `w0 = 1 - prevalence`.
    Literal,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Balanced => "balanced",
            WeightMode::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(WeightMode::Balanced),
            "literal" => Ok(WeightMode::Literal),
            other => Err(Error::Config(format!("unknown weight mode `{other}` (balanced, literal)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilConfig {
    pub head: Head,
    /// Patches that inherit the bag label (label assignment only).
    pub k: usize,
    /// Sparsity factor (sparse only).
    pub mu: f64,
    pub lambda: f64,
    pub weight_mode: WeightMode,
}

impl MilConfig {
    pub fn new(head: Head) -> Self {
        let (mu, lambda) = match head {
            Head::Sparse => (1e-5, 5e-6),
            _ => (0.0, 1e-5),
        };
        MilConfig {
            head,
            k: 4,
            mu,
            lambda,
            weight_mode: WeightMode::Balanced,
        }
    }

    /// Checks the config against `m` instances per bag.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.head == Head::LabelAssign && (self.k == 0 || self.k > m) {
            return Err(Error::Config(format!("k = {} must be in 1..={m}", self.k)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu = {} must be >= 0", self.mu)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda = {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BagWeights {
    pub w1: f64,
    pub w0: f64,
    pub w1_patch: f64,
    pub w0_patch: f64,
}

impl BagWeights {
    pub const UNIT: BagWeights = BagWeights {
        w1: 1.0,
        w0: 1.0,
        w1_patch: 1.0,
        w0_patch: 1.0,
    };

    fn bag(&self, positive: bool) -> f64 {
        if positive {
            self.w1
        } else {
            self.w0
        }
    }
}

/// Class weights from training-set counts.
///
/// Patch weights are `w'_1 = k * n_pos / (m * n_total)`, `w'_0 = 1 - w'_1`.
pub fn bag_weights(n_pos: usize, n_total: usize, k: usize, m: usize, mode: WeightMode) -> Result<BagWeights> {
    if n_pos == 0 || n_pos >= n_total {
        return Err(Error::DegenerateClasses {
            positives: n_pos,
            total: n_total,
        });
    }
    if k == 0 || k > m {
        return Err(Error::Config(format!("k = {k} must be in 1..={m}")));
    }
    let prevalence = n_pos as f64 / n_total as f64;
    let w1_patch = (k * n_pos) as f64 / (m * n_total) as f64;
    let (w1, w0) = match mode {
        WeightMode::Balanced => (1.0 - prevalence, prevalence),
        WeightMode::Literal => (prevalence, 1.0 - prevalence),
    };
    Ok(BagWeights {
        w1,
        w0,
        w1_patch,
        w0_patch: 1.0 - w1_patch,
    })
}

/// `-w * sum(log(x))` or `-w * sum(log(1 - x))`.
fn weighted_log_sum(g: &mut Graph, x: NodeId, positive: bool, w: f64) -> Result<NodeId> {
    let arg = if positive { x } else { g.one_minus(x) };
    let l = g.log(arg)?;
    let s = g.reduce_sum(l);
    Ok(g.scale(s, -w))
}

/// Max pooling term for one bag, given its ranked responses.
pub fn loss_max_pool(g: &mut Graph, sorted: NodeId, positive: bool, w: &BagWeights) -> Result<NodeId> {
    let top = g.gather(sorted, alloc::vec![0])?;
    weighted_log_sum(g, top, positive, w.bag(positive))
}

/// Label assignment term for one bag, given its ranked responses.
pub fn loss_label_assign(
    g: &mut Graph,
    sorted: NodeId,
    positive: bool,
    k: usize,
    w: &BagWeights,
) -> Result<NodeId> {
    let m = g.value(sorted).len();
    if k == 0 || k > m {
        return Err(Error::Config(format!("k = {k} must be in 1..={m}")));
    }
    let top = g.gather(sorted, (0..k).collect())?;
    let w_top = if positive { w.w1_patch } else { w.w0_patch };
    let head = weighted_log_sum(g, top, positive, w_top)?;
    if k == m {
        return Ok(head);
    }
    let rest = g.gather(sorted, (k..m).collect())?;
    let tail = weighted_log_sum(g, rest, false, w.w0_patch)?;
    g.add_scalars(&[head, tail])
}

/// Sparse term for one bag, given its ranked responses.
pub fn loss_sparse(g: &mut Graph, sorted: NodeId, positive: bool, mu: f64, w: &BagWeights) -> Result<NodeId> {
    let bag = loss_max_pool(g, sorted, positive, w)?;
    let l1 = g.l1_norm(sorted);
    let penalty = g.scale(l1, mu);
    g.add_scalars(&[bag, penalty])
}

/// Ranks a bag's response vector and applies the configured head.
pub fn bag_term(
    g: &mut Graph,
    responses: NodeId,
    positive: bool,
    cfg: &MilConfig,
    w: &BagWeights,
) -> Result<NodeId> {
    let (sorted, _) = g.sort_descending(responses)?;
    match cfg.head {
        Head::MaxPool => loss_max_pool(g, sorted, positive, w),
        Head::LabelAssign => loss_label_assign(g, sorted, positive, cfg.k, w),
        Head::Sparse => loss_sparse(g, sorted, positive, cfg.mu, w),
    }
}

/// `lambda/2 * sum ||theta||^2` over the given parameter nodes.
pub fn regularizer(g: &mut Graph, params: &[NodeId], lambda: f64) -> Result<NodeId> {
    let norms: Vec<NodeId> = params.iter().map(|&p| g.l2_norm_sq(p)).collect();
    let total = g.add_scalars(&norms)?;
    Ok(g.scale(total, lambda / 2.0))
}

/// Batch objective on a recorded forward pass: per-bag terms summed in bag
/// order, plus the weight-decay term once.
pub fn objective(fwd: &mut Forward, labels: &[bool], cfg: &MilConfig, w: &BagWeights) -> Result<NodeId> {
    if labels.len() != fwd.batch() {
        return Err(Error::Invalid(format!(
            "{} labels for a batch of {}",
            labels.len(),
            fwd.batch()
        )));
    }
    let mut terms = Vec::with_capacity(labels.len() + 1);
    for (n, &y) in labels.iter().enumerate() {
        let idx = fwd.bag_indices(n);
        let r = fwd.graph.gather(fwd.responses, idx)?;
        terms.push(bag_term(&mut fwd.graph, r, y, cfg, w)?);
    }
    let params = fwd.params.clone();
    terms.push(regularizer(&mut fwd.graph, &params, cfg.lambda)?);
    fwd.graph.add_scalars(&terms)
}

/// Loss of a single bag from raw (unranked) responses, with its gradient
/// with respect to those responses. No weight-decay term.
#[derive(Debug, Clone, PartialEq)]
pub struct BagEval {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn evaluate_bag(responses: &[f64], positive: bool, cfg: &MilConfig, w: &BagWeights) -> Result<BagEval> {
    let mut g = Graph::new();
    let r = g.input(Tensor::vector(responses.to_vec()));
    let loss = bag_term(&mut g, r, positive, cfg, w)?;
    let grads = g.backward(loss)?;
    Ok(BagEval {
        loss: g.value(loss).item(),
        grad: grads.get(r).into_data(),
    })
}

/// Bag probability: the top-ranked response, for every head.
pub fn infer_bag(ranked: &RankedResponses) -> Result<f64> {
    ranked.sorted.first().copied().ok_or(Error::Empty { op: "infer_bag" })
}
