use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{ensure, Result};

/// How the `decay` coefficient is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `lr_k = lr / (1 + decay * k)` at iteration `k`.
    #[default]
    Iteration,
    /// L2 penalty: `g += decay * param`, constant learning rate.
    WeightDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_mode: DecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_mode: DecayMode::Iteration,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr > 0.0 && self.lr.is_finite(), InvalidInput, "lr must be positive, got {}", self.lr);
        ensure!(self.decay >= 0.0, InvalidInput, "decay must be non-negative, got {}", self.decay);
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            InvalidInput,
            "betas must lie in [0, 1), got {} and {}",
            self.beta1,
            self.beta2
        );
        ensure!(self.eps > 0.0, InvalidInput, "eps must be positive, got {}", self.eps);
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        match self.decay_mode {
            DecayMode::Iteration => self.lr / (1.0 + self.decay * step as f64),
            DecayMode::WeightDecay => self.lr,
        }
    }
}

/// Moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

pub fn adam_step(cfg: &AdamConfig, state: &mut AdamState, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
    ensure!(
        params.len() == grads.len() && params.len() == state.m.len(),
        Shape,
        "adam got {} params, {} grads, {} moment slots",
        params.len(),
        grads.len(),
        state.m.len()
    );
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        ensure!(
            p.shape() == g.shape() && p.shape() == state.m[i].shape(),
            Shape,
            "adam slot {i}: param {:?}, grad {:?}, moment {:?}",
            p.shape(),
            g.shape(),
            state.m[i].shape()
        );
    }
    let lr = cfg.lr_at(state.step);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let l2 = if cfg.decay_mode == DecayMode::WeightDecay { cfg.decay } else { 0.0 };
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let pd = p.data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            let gk = gk + l2 * pd[k];
            let mk = &mut m.data_mut()[k];
            *mk = cfg.beta1 * *mk + (1.0 - cfg.beta1) * gk;
            let vk = &mut v.data_mut()[k];
            *vk = cfg.beta2 * *vk + (1.0 - cfg.beta2) * gk * gk;
            let mhat = m.data()[k] / bc1;
            let vhat = v.data()[k] / bc2;
            pd[k] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        let mut p = scalar(1.0);
        let mut st = AdamState::new([&p]);
        adam_step(&cfg, &mut st, &mut [&mut p], &[scalar(2.0)]).unwrap();
        let want = 1.0 - 1e-5 * 2.0 / (2.0 + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-15);
        assert!((p.data()[0] - (1.0 - 1e-5)).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::from_vec(&[3], vec![0.5, -2.0, 7.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        for _ in 0..5 {
            adam_step(&cfg, &mut st, &mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn equal_gradients_equal_updates() {
        let cfg = AdamConfig {
            lr: 1e-2,
            ..Default::default()
        };
        let mut a = scalar(0.3);
        let mut b = scalar(0.3);
        let mut st = AdamState::new([&a, &b]);
        for k in 0..10 {
            let g = scalar((k as f64).sin());
            adam_step(&cfg, &mut st, &mut [&mut a, &mut b], &[g.clone(), g]).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn iteration_decay_schedule() {
        let cfg = AdamConfig {
            lr: 1.0,
            decay: 0.5,
            ..Default::default()
        };
        assert_eq!(cfg.lr_at(0), 1.0);
        assert_eq!(cfg.lr_at(2), 0.5);
        let wd = AdamConfig {
            decay_mode: DecayMode::WeightDecay,
            ..cfg
        };
        assert_eq!(wd.lr_at(100), 1.0);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let cfg = AdamConfig {
            lr: 1e-2,
            decay: 0.1,
            decay_mode: DecayMode::WeightDecay,
            ..Default::default()
        };
        let mut p = scalar(1.0);
        let mut st = AdamState::new([&p]);
        adam_step(&cfg, &mut st, &mut [&mut p], &[scalar(0.0)]).unwrap();
        assert!(p.data()[0] < 1.0);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::zeros(&[2]);
        let mut st = AdamState::new([&p]);
        assert!(adam_step(&cfg, &mut st, &mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
        assert!(adam_step(&cfg, &mut st, &mut [], &[]).is_err());
    }
}
