use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay. The learning rate is supplied per step
/// so the caller owns the schedule.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    config: AdamWConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Element> AdamW<F> {
    pub fn new(params: &ParamSet<F>, config: AdamWConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![F::zero(); p.value.len()]).collect();
        AdamW {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `θ ← θ − lr·(m̂/(√v̂ + ε) + λ·θ)` for every parameter.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &[Tensor<F>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer built for {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let bc1 = F::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = F::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps, wd) = (F::of(lr), F::of(c.eps), F::of(c.weight_decay));
        for (i, grad) in grads.iter().enumerate() {
            let theta = params.tensor_mut(i);
            if theta.shape() != grad.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    grad.shape(),
                    theta.shape()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &gr), mi), vi) in theta.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (F::one() - b1) * gr;
                *vi = b2 * *vi + (F::one() - b2) * gr * gr;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p = *p - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: &[f64]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_f64(vec![v.len()], v).unwrap());
        p
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = one_param(&[1.0, -2.0]);
        let before = p.clone();
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        let g = Tensor::from_f64(vec![2], &[0.5, 0.5]).unwrap();
        opt.step(&mut p, &[g], 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = one_param(&[0.0, 0.0]);
        let mut opt = AdamW::new(
            &p,
            AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
        );
        let g = Tensor::from_f64(vec![2], &[3.0, -0.2]).unwrap();
        opt.step(&mut p, &[g], 0.1).unwrap();
        let w = p.get("w").unwrap().data();
        // Bias-corrected first step is lr·g/(|g| + eps).
        assert!((w[0] + 0.1).abs() < 1e-7 && (w[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn decay_shrinks_weights_without_gradient() {
        let mut p = one_param(&[2.0]);
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        opt.step(&mut p, &[Tensor::zeros(vec![1])], 0.5).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-12);
    }
}
