//! Stratified k-fold assignment and the train/validation/test rotation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    /// Fold id of every sample.
    pub fold_of: Vec<usize>,
    pub n_folds: usize,
}

/// Sample indices of one cross-validation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub test_fold: usize,
    pub val_fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles each class with a seeded stream and deals it round-robin over
/// the folds. Negatives continue where the positives stopped, so fold sizes
/// also differ by at most one.
pub fn make_folds(labels: &[bool], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < n_folds || neg.len() < n_folds {
        return Err(Error::Invalid(format!(
            "{} positives and {} negatives cannot fill {n_folds} stratified folds",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = rng::stream(seed, Purpose::Folds, 0, 0);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold_of = vec![0; labels.len()];
    for (slot, &i) in pos.iter().chain(&neg).enumerate() {
        fold_of[i] = slot % n_folds;
    }
    Ok(FoldPlan { fold_of, n_folds })
}

impl FoldPlan {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Test on `test_fold`, validate on the next fold, train on the rest.
    pub fn split(&self, test_fold: usize) -> Split {
        let val_fold = (test_fold + 1) % self.n_folds;
        let mut train = Vec::new();
        for (i, &f) in self.fold_of.iter().enumerate() {
            if f != test_fold && f != val_fold {
                train.push(i);
            }
        }
        Split {
            test_fold,
            val_fold,
            train,
            val: self.members(val_fold),
            test: self.members(test_fold),
        }
    }

    pub fn splits(&self) -> Vec<Split> {
        (0..self.n_folds).map(|t| self.split(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pos: usize, neg: usize) -> Vec<bool> {
        let mut v = vec![true; pos];
        v.extend(vec![false; neg]);
        v
    }

    fn positives_per_fold(plan: &FoldPlan, y: &[bool]) -> Vec<usize> {
        (0..plan.n_folds)
            .map(|f| plan.members(f).iter().filter(|&&i| y[i]).count())
            .collect()
    }

    #[test]
    fn even_split() {
        let y = labels(10, 40);
        let plan = make_folds(&y, 5, 7).unwrap();
        for f in 0..5 {
            let m = plan.members(f);
            assert_eq!(m.iter().filter(|&&i| y[i]).count(), 2);
            assert_eq!(m.len(), 10);
        }
        assert_eq!(plan, make_folds(&y, 5, 7).unwrap());
    }

    #[test]
    fn remainder_goes_to_the_first_folds() {
        let y = labels(94, 316);
        let plan = make_folds(&y, 5, 1).unwrap();
        assert_eq!(positives_per_fold(&plan, &y), vec![19, 19, 19, 19, 18]);
        let sizes: Vec<usize> = (0..5).map(|f| plan.members(f).len()).collect();
        assert_eq!(sizes, vec![82; 5]);
    }

    #[test]
    fn rotation_uses_each_sample_once_as_test() {
        let y = labels(7, 23);
        let plan = make_folds(&y, 5, 3).unwrap();
        let mut seen = vec![0; y.len()];
        for s in plan.splits() {
            assert_eq!(s.val_fold, (s.test_fold + 1) % 5);
            assert_eq!(s.train.len() + s.val.len() + s.test.len(), y.len());
            for &i in &s.test {
                seen[i] += 1;
            }
            for &i in &s.train {
                assert!(!s.val.contains(&i) && !s.test.contains(&i));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn too_few_per_class() {
        assert!(make_folds(&labels(4, 40), 5, 0).is_err());
    }
}
