use milnet_core::heads::{self, bag_weights, BagWeights, Head, MilConfig, WeightMode};
use proptest::prelude::*;

/// Straight-line loss of one bag: sort by hand, then sum the log terms.
fn oracle(r: &[f64], positive: bool, cfg: &MilConfig, w: &BagWeights) -> f64 {
    let mut s = r.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (wy, py) = if positive { (w.w1, s[0]) } else { (w.w0, 1.0 - s[0]) };
    match cfg.head {
        Head::MaxPool => -wy * py.ln(),
        Head::Sparse => -wy * py.ln() + cfg.mu * s.iter().map(|v| v.abs()).sum::<f64>(),
        Head::LabelAssign => {
            let mut total = 0.0;
            for (j, &v) in s.iter().enumerate() {
                total += if j < cfg.k {
                    if positive {
                        -w.w1_patch * v.ln()
                    } else {
                        -w.w0_patch * (1.0 - v).ln()
                    }
                } else {
                    -w.w0_patch * (1.0 - v).ln()
                };
            }
            total
        }
    }
}

fn cfg(head: Head, k: usize, mu: f64) -> MilConfig {
    MilConfig {
        k,
        mu,
        ..MilConfig::new(head)
    }
}

fn bag(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..0.999, 1..=max)
}

fn weights() -> impl Strategy<Value = BagWeights> {
    (0.05f64..1.0, 0.05f64..1.0, 0.01f64..0.99).prop_map(|(w1, w0, p)| BagWeights {
        w1,
        w0,
        w1_patch: p,
        w0_patch: 1.0 - p,
    })
}

#[test]
fn worked_values() {
    let w = BagWeights {
        w1: 1.0,
        w0: 1.0,
        w1_patch: 0.25,
        w0_patch: 0.75,
    };
    let r = [0.2, 0.8, 0.5, 0.1];
    let mp = heads::evaluate_bag(&r, true, &cfg(Head::MaxPool, 1, 0.0), &w).unwrap().loss;
    assert!((mp - 0.223144).abs() < 1e-6);
    let la = heads::evaluate_bag(&r, true, &cfg(Head::LabelAssign, 2, 0.0), &w).unwrap().loss;
    let direct = 0.25 * (-(0.8f64).ln() - (0.5f64).ln()) + 0.75 * (-(0.8f64).ln() - (0.9f64).ln());
    assert!((la - direct).abs() < 1e-15);
    assert!((la - 0.475451).abs() < 1e-6);
    let sp = heads::evaluate_bag(&r, true, &cfg(Head::Sparse, 1, 0.01), &w).unwrap().loss;
    assert!((sp - 0.239144).abs() < 1e-6);
}

#[test]
fn label_zero_collapses_to_all_negative() {
    let w = bag_weights(3, 10, 2, 4, WeightMode::Balanced).unwrap();
    let r = [0.2, 0.8, 0.5, 0.1];
    let la = heads::evaluate_bag(&r, false, &cfg(Head::LabelAssign, 2, 0.0), &w).unwrap().loss;
    let want: f64 = r.iter().map(|v| -w.w0_patch * (1.0 - v).ln()).sum();
    assert!((la - want).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sparse_without_penalty_is_max_pool(r in bag(36), y in any::<bool>(), w in weights()) {
        let a = heads::evaluate_bag(&r, y, &cfg(Head::Sparse, 1, 0.0), &w).unwrap();
        let b = heads::evaluate_bag(&r, y, &cfg(Head::MaxPool, 1, 0.0), &w).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-12);
        for (ga, gb) in a.grad.iter().zip(&b.grad) {
            prop_assert!((ga - gb).abs() < 1e-12);
        }
    }

    #[test]
    fn full_assignment_is_per_instance_cross_entropy(r in bag(6), w in weights()) {
        let m = r.len();
        let unit = BagWeights { w1_patch: 1.0, w0_patch: 0.0, ..w };
        for weights in [w, unit] {
            let got = heads::evaluate_bag(&r, true, &cfg(Head::LabelAssign, m, 0.0), &weights).unwrap().loss;
            let ce: f64 = r.iter().map(|v| -weights.w1_patch * v.ln()).sum();
            prop_assert!((got - ce).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_oracle(r in bag(8), y in any::<bool>(), w in weights(), k in 1usize..=8, mu in 0.0f64..1.0) {
        for head in Head::ALL {
            let c = cfg(head, k.min(r.len()), mu);
            let got = heads::evaluate_bag(&r, y, &c, &w).unwrap().loss;
            prop_assert!((got - oracle(&r, y, &c, &w)).abs() < 1e-12, "{:?}", head);
        }
    }

    #[test]
    fn permutation_invariant(r in bag(16), y in any::<bool>(), w in weights(), k in 1usize..=16, rot in 0usize..16) {
        let mut p = r.clone();
        p.rotate_left(rot % r.len());
        p.reverse();
        for head in Head::ALL {
            let c = cfg(head, k.min(r.len()), 0.1);
            let a = heads::evaluate_bag(&r, y, &c, &w).unwrap().loss;
            let b = heads::evaluate_bag(&p, y, &c, &w).unwrap().loss;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn top_response_moves_loss_the_right_way(r in bag(12), w in weights()) {
        let top = r.iter().cloned().fold(f64::MIN, f64::max);
        let i = r.iter().position(|&v| v == top).unwrap();
        let mut up = r.clone();
        up[i] = (top + 0.999) / 2.0;
        prop_assume!(up[i] > top);
        for head in [Head::MaxPool, Head::Sparse] {
            let c = cfg(head, 1, 0.0);
            let pos = |v: &[f64]| heads::evaluate_bag(v, true, &c, &w).unwrap().loss;
            let neg = |v: &[f64]| heads::evaluate_bag(v, false, &c, &w).unwrap().loss;
            prop_assert!(pos(&up) < pos(&r));
            prop_assert!(neg(&up) > neg(&r));
        }
    }

    #[test]
    fn gradient_support(r in prop::collection::vec(0.001f64..0.999, 2..=16), y in any::<bool>(), w in weights(), k in 1usize..=16) {
        let mp = heads::evaluate_bag(&r, y, &cfg(Head::MaxPool, 1, 0.0), &w).unwrap();
        prop_assert_eq!(mp.grad.iter().filter(|g| **g != 0.0).count(), 1);
        let la = heads::evaluate_bag(&r, y, &cfg(Head::LabelAssign, k.min(r.len()), 0.0), &w).unwrap();
        prop_assert!(la.grad.iter().all(|g| *g != 0.0));
        let sp = heads::evaluate_bag(&r, y, &cfg(Head::Sparse, 1, 0.01), &w).unwrap();
        prop_assert!(sp.grad.iter().all(|g| *g != 0.0));
    }
}

#[test]
fn weights_and_validation() {
    let w = bag_weights(94, 410, 4, 36, WeightMode::Literal).unwrap();
    assert!((w.w1 - 94.0 / 410.0).abs() < 1e-15);
    assert!(bag_weights(0, 10, 4, 16, WeightMode::Balanced).is_err());
    assert!(bag_weights(10, 10, 4, 16, WeightMode::Balanced).is_err());
    assert!(cfg(Head::LabelAssign, 17, 0.0).validate(16).is_err());
    assert!(cfg(Head::LabelAssign, 16, 0.0).validate(16).is_ok());
}
