use milnet_core::image::GrayImage;
use milnet_core::metrics::{self, BagMode};
use milnet_core::preprocess::{self, AugmentConfig};
use milnet_core::rng::{self, Purpose};
use proptest::prelude::*;

/// Exhaustive Otsu: class sums recomputed from the pixels for every
/// threshold, variances compared as exact fractions.
fn otsu_oracle(img: &GrayImage) -> Option<u8> {
    let px = img.pixels();
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 0..=254u8 {
        let (mut n0, mut s0, mut n1, mut s1) = (0u128, 0u128, 0u128, 0u128);
        for &p in px {
            if p <= t {
                n0 += 1;
                s0 += p as u128;
            } else {
                n1 += 1;
                s1 += p as u128;
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (s0 * n1).abs_diff(s1 * n0);
        let (num, den) = (d * d, n0 * n1);
        if best.map_or(true, |(_, bn, bd)| num * bd > bn * den) {
            best = Some((t, num, den));
        }
    }
    best.map(|(t, ..)| t)
}

fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                credit += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    credit / pairs
}

fn image_strategy() -> impl Strategy<Value = GrayImage> {
    (1usize..=24, 1usize..=24, prop::collection::vec(any::<u8>(), 1..=6), any::<bool>())
        .prop_flat_map(|(w, h, palette, full)| {
            let pixel = if full {
                any::<u8>().boxed()
            } else {
                prop::sample::select(palette).boxed()
            };
            prop::collection::vec(pixel, w * h).prop_map(move |px| GrayImage::new(w, h, px).unwrap())
        })
}

/// Scores on a dyadic grid so monotone transforms below are exact.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec((0u32..64).prop_map(|k| k as f64 / 64.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn otsu_matches_exhaustive_search(img in image_strategy()) {
        let got = preprocess::otsu_threshold(&img);
        match otsu_oracle(&img) {
            Some(t) => {
                prop_assert!(!got.degenerate);
                prop_assert_eq!(got.threshold, t);
            }
            None => {
                prop_assert!(got.degenerate);
                prop_assert_eq!(got.threshold, img.pixels()[0]);
            }
        }
    }

    #[test]
    fn auc_matches_pair_counting((s, y) in scored_labels()) {
        let a = metrics::auc(&s, &y).unwrap();
        prop_assert!((a - pair_auc(&s, &y)).abs() < 1e-12);
        let roc = metrics::roc_curve(&s, &y).unwrap();
        prop_assert!((roc.area() - a).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn crop_is_idempotent(img in image_strategy()) {
        let t = preprocess::otsu_threshold(&img);
        if let Ok(once) = preprocess::crop_foreground(&img, t.threshold) {
            let twice = preprocess::crop_foreground(&once, t.threshold).unwrap();
            prop_assert_eq!(twice, once);
        }
    }

    #[test]
    fn augment_keeps_shape_and_blank_images(img in image_strategy(), seed in any::<u64>()) {
        let mut r = rng::stream(seed, Purpose::Augment, 0, 0);
        let out = preprocess::augment(&img, &AugmentConfig::default(), &mut r);
        prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
        let blank = GrayImage::filled(img.width(), img.height(), 0);
        let mut r = rng::stream(seed, Purpose::Augment, 0, 0);
        prop_assert_eq!(preprocess::augment(&blank, &AugmentConfig::default(), &mut r), blank);
        let mut r = rng::stream(seed, Purpose::Augment, 0, 0);
        prop_assert_eq!(preprocess::augment(&img, &AugmentConfig::IDENTITY, &mut r), img);
    }

    #[test]
    fn auc_invariant_under_monotone_maps((s, y) in scored_labels()) {
        let a = metrics::auc(&s, &y).unwrap();
        let cubed: Vec<f64> = s.iter().map(|v| v * v * v + 0.5 * v).collect();
        let shifted: Vec<f64> = s.iter().map(|v| 4.0 * v - 3.0).collect();
        prop_assert_eq!(metrics::auc(&cubed, &y).unwrap(), a);
        prop_assert_eq!(metrics::auc(&shifted, &y).unwrap(), a);
    }

    #[test]
    fn accuracy_matches_counting((s, y) in scored_labels()) {
        let want = s.iter().zip(&y).filter(|(v, l)| (**v >= 0.5) == **l).count() as f64 / s.len() as f64;
        prop_assert_eq!(metrics::accuracy(&s, &y, 0.5).unwrap(), want);
    }

    #[test]
    fn roc_is_monotone((s, y) in scored_labels()) {
        let roc = metrics::roc_curve(&s, &y).unwrap();
        let p = &roc.points;
        prop_assert_eq!((p[0].fpr, p[0].tpr), (0.0, 0.0));
        let last = p[p.len() - 1];
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in p.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
            prop_assert!(w[0].threshold > w[1].threshold);
        }
    }
}

/// Every label vector and every score assignment from a three-level grid,
/// for all sizes up to six.
#[test]
fn auc_and_accuracy_exhaustive_small_sets() {
    let levels = [0.25, 0.5, 0.75];
    for n in 2..=6usize {
        for mask in 0..(1u32 << n) {
            let y: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let both = y.iter().any(|&b| b) && y.iter().any(|&b| !b);
            for code in 0..3usize.pow(n as u32) {
                let s: Vec<f64> = (0..n).map(|i| levels[code / 3usize.pow(i as u32) % 3]).collect();
                let want = s.iter().zip(&y).filter(|(v, l)| (**v >= 0.5) == **l).count() as f64 / n as f64;
                assert_eq!(metrics::accuracy(&s, &y, 0.5).unwrap(), want);
                if both {
                    assert!((metrics::auc(&s, &y).unwrap() - pair_auc(&s, &y)).abs() < 1e-12);
                } else {
                    assert!(metrics::auc(&s, &y).is_err());
                }
            }
        }
    }
}

#[test]
fn bagging_examples() {
    let avg = metrics::bagging(&[vec![0.2], vec![0.8]], BagMode::Average).unwrap();
    assert!((avg[0] - 0.5).abs() < 1e-15);
    let vote = metrics::bagging(&[vec![0.9], vec![0.9], vec![0.1]], BagMode::Vote).unwrap();
    assert!((vote[0] - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(metrics::bagging(&[vec![0.3, 0.7]], BagMode::Average).unwrap(), vec![0.3, 0.7]);
    assert!(metrics::bagging(&[], BagMode::Average).is_err());
}
