//! Adam with bias correction.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::autodiff::GradMap;
use crate::error::{Error, Result};
use crate::math;
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Parameters plus optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    /// First moments, in parameter order.
    pub m: Vec<Tensor>,
    /// Second moments, in parameter order.
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        let m: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let v = m.clone();
        TrainState { params, m, v, step: 0 }
    }

    /// One Adam update. Every parameter must have a gradient.
    pub fn adam_step(&mut self, grads: &GradMap, cfg: &AdamConfig) -> Result<()> {
        for (name, t) in self.params.iter() {
            match grads.get(name) {
                Some(g) if g.shape() == t.shape() => {}
                Some(g) => {
                    return Err(Error::ShapeMismatch {
                        op: "adam_step",
                        left: t.shape().to_vec(),
                        right: g.shape().to_vec(),
                    })
                }
                None => return Err(Error::MissingGradient(name.to_string())),
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - math::powi(cfg.beta1, t);
        let bc2 = 1.0 - math::powi(cfg.beta2, t);
        for (i, (name, param)) in self.params.iter_mut().enumerate() {
            let g = grads[name].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((p, mi), vi), gi) in param.data_mut().iter_mut().zip(m).zip(v).zip(g) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= cfg.lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use alloc::vec;

    fn state(values: &[(&str, f64)]) -> TrainState {
        TrainState::new(ModelParams::from_named(
            values
                .iter()
                .map(|(n, v)| (String::from(*n), Tensor::vector(vec![*v])))
                .collect(),
        ))
    }

    #[test]
    fn first_step_is_lr_over_one_plus_eps() {
        let mut s = state(&[("a", 0.0)]);
        let mut g = GradMap::new();
        g.insert("a".into(), Tensor::vector(vec![1.0]));
        s.adam_step(&g, &AdamConfig::default()).unwrap();
        let got = s.params.get("a").unwrap().item();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((got - expected).abs() < 1e-18, "{got} vs {expected}");
        assert!((got + 0.000_999_999_990).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = state(&[("a", 0.3)]);
        s.m[0] = Tensor::vector(vec![0.5]);
        s.v[0] = Tensor::vector(vec![0.25]);
        let mut g = GradMap::new();
        g.insert("a".into(), Tensor::vector(vec![0.0]));
        let before = s.params.get("a").unwrap().item();
        s.adam_step(&g, &AdamConfig { lr: 0.0, ..AdamConfig::default() }).unwrap();
        assert_eq!(s.params.get("a").unwrap().item(), before);
        assert_eq!(s.m[0].item(), 0.45);
        assert!((s.v[0].item() - 0.24975).abs() < 1e-15);

        // fresh moments: zero update
        let mut s = state(&[("a", 0.3)]);
        s.adam_step(&g, &AdamConfig::default()).unwrap();
        assert_eq!(s.params.get("a").unwrap().item(), 0.3);
    }

    #[test]
    fn equal_grads_equal_updates() {
        let mut s = state(&[("a", 1.0), ("b", 1.0)]);
        let mut g = GradMap::new();
        g.insert("a".into(), Tensor::vector(vec![0.7]));
        g.insert("b".into(), Tensor::vector(vec![0.7]));
        for _ in 0..3 {
            s.adam_step(&g, &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.params.get("a"), s.params.get("b"));
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = state(&[("a", 1.0), ("b", 1.0)]);
        let mut g = GradMap::new();
        g.insert("a".into(), Tensor::vector(vec![0.7]));
        assert_eq!(s.adam_step(&g, &AdamConfig::default()), Err(Error::MissingGradient("b".into())));
        assert_eq!(s.step, 0);
    }
}
