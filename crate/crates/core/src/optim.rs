//! Adam with coupled L2 weight decay, and the plateau learning-rate rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    /// First-moment decay; zero disables momentum.
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * param`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment estimates for one [`ParamSet`], stored flat in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
        }
    }

    /// One update of `params` with per-tensor gradients `grads`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Matrix<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.num_scalars() {
            return Err(Error::contract("optimizer state does not match the parameters"));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let one = T::one();
        let bias1 = one - T::of(c.beta1.powf(self.step as f64));
        let bias2 = one - T::of(c.beta2.powf(self.step as f64));
        let (lr, eps, wd) = (T::of(lr), T::of(c.eps), T::of(c.weight_decay));
        let mut at = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, gi) in p.value.data_mut().iter_mut().zip(g.data()) {
                let grad = *gi + wd * *w;
                let m = &mut self.m[at];
                let v = &mut self.v[at];
                *m = b1 * *m + (one - b1) * grad;
                *v = b2 * *v + (one - b2) * grad * grad;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
                at += 1;
            }
        }
        Ok(())
    }
}

/// Multiplies learning rates by `factor` once the monitored error has failed to
/// improve for `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub best: Option<f64>,
    pub epochs_since_improvement: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauOutcome {
    Improved,
    Waiting,
    /// Patience exhausted; rates should be scaled by the factor.
    Reduce,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Result<Self> {
        if patience == 0 || !(factor > 0.0 && factor < 1.0) {
            return Err(Error::config("plateau scheduler needs patience >= 1 and 0 < factor < 1"));
        }
        Ok(Self {
            patience,
            factor,
            best: None,
            epochs_since_improvement: 0,
        })
    }

    pub fn observe(&mut self, metric: f64) -> PlateauOutcome {
        if self.best.map_or(true, |b| metric < b) {
            self.best = Some(metric);
            self.epochs_since_improvement = 0;
            return PlateauOutcome::Improved;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement >= self.patience {
            self.epochs_since_improvement = 0;
            PlateauOutcome::Reduce
        } else {
            PlateauOutcome::Waiting
        }
    }
}
