//! Accuracy, ROC/AUC and bagging.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Empty { op: "metric" });
    }
    Ok(())
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateClasses {
            positives: pos,
            total: labels.len(),
        });
    }
    Ok((pos, neg))
}

/// Fraction of samples where `score >= threshold` agrees with the label.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_lengths(scores, labels)?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, y)| (**s >= threshold) == **y)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Mann-Whitney estimate of the area under the ROC curve. Tied
/// positive/negative pairs count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(core::cmp::Ordering::Equal));
    // midranks, 1-based; sum of positive ranks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples with `score >= threshold` are called positive. The first
    /// point uses `+inf`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

/// ROC curve with one point per distinct score, swept from high to low.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(core::cmp::Ordering::Equal));
    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push(RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: t,
        });
    }
    Ok(RocCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BagMode {
    Average,
    Vote,
}

impl BagMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(BagMode::Average),
            "vote" => Ok(BagMode::Vote),
            other => Err(Error::Config(format!("unknown bagging mode `{other}` (average, vote)"))),
        }
    }
}

/// Combines per-model score lists. `vote` yields the fraction of models with
/// `score >= 0.5`.
pub fn bagging(models: &[Vec<f64>], mode: BagMode) -> Result<Vec<f64>> {
    let first = models.first().ok_or(Error::Empty { op: "bagging" })?;
    if let Some(bad) = models.iter().find(|m| m.len() != first.len()) {
        return Err(Error::Invalid(format!(
            "score lists differ in length: {} vs {}",
            first.len(),
            bad.len()
        )));
    }
    let n = models.len() as f64;
    Ok((0..first.len())
        .map(|i| match mode {
            BagMode::Average => models.iter().map(|m| m[i]).sum::<f64>() / n,
            BagMode::Vote => models.iter().filter(|m| m[i] >= 0.5).count() as f64 / n,
        })
        .collect())
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, math::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.2], &[true, false], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.9, 0.2], &[false, true], 0.5).unwrap(), 0.0);
        assert_eq!(accuracy(&[0.5], &[true], 0.5).unwrap(), 1.0);
        assert!(accuracy(&[], &[], 0.5).is_err());
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.4, 0.3, 0.5];
        let y = [true, true, false, false];
        assert_eq!(auc(&s, &y).unwrap(), 0.75);
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn roc_separated_is_a_staircase_through_top_left() {
        let roc = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        let pts: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]);
        assert_eq!(roc.area(), 1.0);
        let one = roc_curve(&[0.7, 0.2], &[true, false]).unwrap();
        assert_eq!(one.area(), 1.0);
    }

    #[test]
    fn bagging_examples() {
        assert_eq!(bagging(&[vec![0.2], vec![0.8]], BagMode::Average).unwrap(), vec![0.5]);
        let v = bagging(&[vec![0.9], vec![0.9], vec![0.1]], BagMode::Vote).unwrap();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15);
        for mode in [BagMode::Average, BagMode::Vote] {
            let single = bagging(&[vec![0.3, 0.7]], mode).unwrap();
            if mode == BagMode::Average {
                assert_eq!(single, vec![0.3, 0.7]);
            } else {
                assert_eq!(single, vec![0.0, 1.0]);
            }
        }
        assert!(bagging(&[], BagMode::Vote).is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.290_994_448_735_805_6).abs() < 1e-15);
    }
}
