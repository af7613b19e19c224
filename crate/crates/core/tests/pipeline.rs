use milnet_core::folds;
use milnet_core::heads::Head;
use milnet_core::image::GrayImage;
use milnet_core::model::{self, BackboneSpec, ModelParams};
use milnet_core::optim::{AdamConfig, TrainState};
use milnet_core::preprocess;
use milnet_core::stats;
use milnet_core::synth::{self, SynthSpec};
use milnet_core::train::{self, Sample, TrainConfig};
use milnet_core::{Error, Tensor};

fn synth_samples(spec: &SynthSpec, size: usize) -> Vec<Sample> {
    synth::generate(spec)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, s)| Sample {
            id: i as u64,
            image: preprocess::prepare(&s.image, size).unwrap().image,
            positive: s.positive,
        })
        .collect()
}

#[test]
fn responses_do_not_depend_on_channel_order() {
    let spec = BackboneSpec::desk();
    let params = ModelParams::init(&spec, 3).unwrap();
    let last = spec.output_shape().unwrap().0;
    let perm: Vec<usize> = (0..last).rev().collect();
    let n_conv = params.iter().filter(|(n, _)| n.ends_with(".weight") && n.starts_with("conv")).count();
    let conv_w = format!("conv{}.weight", n_conv - 1);
    let conv_b = format!("conv{}.bias", n_conv - 1);

    let mut permuted = params.clone();
    {
        let w = params.get(&conv_w).unwrap();
        let per = w.len() / last;
        let src = w.data().to_vec();
        let dst = permuted.get_mut(&conv_w).unwrap().data_mut();
        for (o, &p) in perm.iter().enumerate() {
            dst[o * per..(o + 1) * per].copy_from_slice(&src[p * per..(p + 1) * per]);
        }
    }
    for name in [conv_b.as_str(), model::RESPONSE_WEIGHT] {
        let src = params.get(name).unwrap().data().to_vec();
        let dst = permuted.get_mut(name).unwrap().data_mut();
        for (o, &p) in perm.iter().enumerate() {
            dst[o] = src[p];
        }
    }

    let img = synth::generate_one(&SynthSpec::default(), 0, true).unwrap().image;
    let img = preprocess::prepare(&img, spec.input_size).unwrap().image;
    let a = train::predict(&spec, &params, &[&img]).unwrap();
    let b = train::predict(&spec, &permuted, &[&img]).unwrap();
    for (x, y) in a[0].values.iter().zip(&b[0].values) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn zero_response_layer_gives_half_everywhere() {
    let spec = BackboneSpec::tiny();
    let mut params = ModelParams::init(&spec, 1).unwrap();
    for v in params.get_mut(model::RESPONSE_WEIGHT).unwrap().data_mut() {
        *v = 0.0;
    }
    let img = GrayImage::filled(16, 16, 77);
    let maps = train::predict(&spec, &params, &[&img]).unwrap();
    assert!(maps[0].values.iter().all(|&v| v == 0.5));
}

#[test]
fn init_and_forward_are_deterministic() {
    let spec = BackboneSpec::desk();
    assert_eq!(ModelParams::init(&spec, 9).unwrap(), ModelParams::init(&spec, 9).unwrap());
    assert_ne!(ModelParams::init(&spec, 9).unwrap(), ModelParams::init(&spec, 10).unwrap());
    let params = ModelParams::init(&spec, 9).unwrap();
    let img = GrayImage::new(64, 64, (0..64 * 64).map(|i| (i * 31 % 251) as u8).collect()).unwrap();
    let a = train::predict(&spec, &params, &[&img, &img]).unwrap();
    assert_eq!(a[0], a[1]);
    assert_eq!(a, train::predict(&spec, &params, &[&img, &img]).unwrap());
}

#[test]
fn adam_first_step() {
    let params = ModelParams::from_named(vec![
        ("a".into(), Tensor::vector(vec![0.0])),
        ("b".into(), Tensor::vector(vec![5.0])),
    ]);
    let mut state = TrainState::new(params);
    let grads = [("a".to_string(), Tensor::vector(vec![1.0])), ("b".to_string(), Tensor::vector(vec![1.0]))]
        .into_iter()
        .collect();
    state.adam_step(&grads, &AdamConfig::default()).unwrap();
    let a = state.params.get("a").unwrap().data()[0];
    let b = state.params.get("b").unwrap().data()[0];
    assert!((a - (-0.001 / (1.0 + 1e-8))).abs() < 1e-18);
    assert!((b - 5.0 - a).abs() < 1e-15);
    assert_eq!(state.step, 1);
}

#[test]
fn fold_examples() {
    let labels: Vec<bool> = (0..50).map(|i| i < 10).collect();
    let plan = folds::make_folds(&labels, 5, 4).unwrap();
    for f in 0..5 {
        let m = plan.members(f);
        assert_eq!(m.len(), 10);
        assert_eq!(m.iter().filter(|&&i| labels[i]).count(), 2);
    }
    assert_eq!(plan, folds::make_folds(&labels, 5, 4).unwrap());

    let labels: Vec<bool> = (0..410).map(|i| i < 94).collect();
    let plan = folds::make_folds(&labels, 5, 0).unwrap();
    let pos: Vec<usize> = (0..5).map(|f| plan.members(f).iter().filter(|&&i| labels[i]).count()).collect();
    assert_eq!(pos, vec![19, 19, 19, 19, 18]);

    let mut seen = vec![0; labels.len()];
    for s in plan.splits() {
        assert_eq!(s.val_fold, (s.test_fold + 1) % 5);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), labels.len());
        for &i in &s.test {
            seen[i] += 1;
        }
        for &i in &s.train {
            assert!(!s.val.contains(&i) && !s.test.contains(&i));
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
    assert!(folds::make_folds(&[true, true, false, false, false, false], 5, 0).is_err());
}

#[test]
fn synthetic_set_properties() {
    let spec = SynthSpec::default();
    let set = synth::generate(&spec).unwrap();
    assert_eq!(set.iter().filter(|s| s.positive).count(), spec.n_pos);
    assert_eq!(set.iter().filter(|s| !s.positive).count(), spec.n_neg);
    for s in &set {
        assert_eq!(s.positive, s.mass.is_some());
        let Some(m) = s.mass else { continue };
        assert!(m.fits_in(s.image.width(), s.image.height()));
        let (mut inside, mut ni, mut outside, mut no) = (0.0, 0.0, 0.0, 0.0);
        for y in 0..s.image.height() {
            for x in 0..s.image.width() {
                let v = s.image.get(x, y) as f64;
                if (m.x..m.x + m.w).contains(&x) && (m.y..m.y + m.h).contains(&y) {
                    inside += v;
                    ni += 1.0;
                } else {
                    outside += v;
                    no += 1.0;
                }
            }
        }
        assert!(inside / ni - outside / no >= spec.lift, "{:?}", m);
    }
    let rows: Vec<_> = set.iter().map(|s| (s.image.width(), s.image.height(), s.mass)).collect();
    let st = stats::dataset_stats(&rows);
    let configured = spec.mass_frac * spec.mass_frac;
    assert!((st.mass_area_fraction - configured).abs() / configured < 0.1);
}

#[test]
fn training_is_deterministic_and_checks_classes() {
    let spec = SynthSpec {
        size: 24,
        n_pos: 4,
        n_neg: 8,
        ..SynthSpec::default()
    };
    let samples = synth_samples(&spec, 16);
    let (tr, va) = samples.split_at(8);
    let mut cfg = TrainConfig::new(BackboneSpec::tiny(), Head::Sparse);
    cfg.epochs = 2;
    cfg.batch_size = 3;
    let (tr, va) = (
        [&tr[..2], &tr[4..]].concat(),
        [&tr[2..4], va].concat(),
    );
    let a = train::train(&tr, &va, &cfg).unwrap();
    let b = train::train(&tr, &va, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.log.len(), 2);

    let negatives: Vec<Sample> = tr.iter().filter(|s| !s.positive).cloned().collect();
    assert!(matches!(
        train::train(&negatives, &va, &cfg),
        Err(Error::DegenerateClasses { .. })
    ));
}

#[test]
fn k_selection_grid() {
    let spec = SynthSpec {
        size: 24,
        n_pos: 4,
        n_neg: 8,
        ..SynthSpec::default()
    };
    let samples = synth_samples(&spec, 16);
    let tr: Vec<Sample> = samples.iter().step_by(2).cloned().collect();
    let va: Vec<Sample> = samples.iter().skip(1).step_by(2).cloned().collect();
    let mut cfg = TrainConfig::new(BackboneSpec::tiny(), Head::LabelAssign);
    cfg.epochs = 1;
    cfg.k_grid = vec![4];
    let (k, _) = train::select_k(&tr, &va, &cfg).unwrap();
    assert_eq!(k, 4);
    cfg.k_grid = vec![4, 17];
    assert!(train::select_k(&tr, &va, &cfg).is_err());
    cfg.mil.head = Head::MaxPool;
    cfg.k_grid = vec![4];
    assert!(train::select_k(&tr, &va, &cfg).is_err());
}
