use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub lr: f64,
    /// Steps collected per environment per iteration.
    pub horizon: usize,
    /// Samples per gradient step.
    pub minibatch: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub max_grad_norm: f64,
    pub entropy_coef: f64,
    pub bounds_coef: f64,
    pub value_coef: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub normalize_advantages: bool,
    /// Truncated BPTT chunk length.
    pub bptt_len: usize,
    pub num_envs: usize,
    /// Training halts when mean |advantage| exceeds this.
    pub divergence_threshold: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 1e-4,
            horizon: 512,
            minibatch: 512,
            epochs: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            max_grad_norm: 1.0,
            entropy_coef: 0.0,
            bounds_coef: 1e-4,
            value_coef: 2.0,
            sigma_min: 0.05,
            sigma_max: 1.0,
            normalize_advantages: true,
            bptt_len: 16,
            num_envs: 16,
            divergence_threshold: 1e4,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lr", self.lr),
            ("clip", self.clip),
            ("max_grad_norm", self.max_grad_norm),
            ("entropy_coef", self.entropy_coef),
            ("bounds_coef", self.bounds_coef),
            ("value_coef", self.value_coef),
            ("gae_lambda", self.gae_lambda),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("ppo.{name}"), format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("ppo.gamma", "must lie in (0, 1)"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max >= self.sigma_min) {
            return Err(Error::config("ppo.sigma_min", "need 0 < sigma_min <= sigma_max"));
        }
        for (name, v) in [("horizon", self.horizon), ("minibatch", self.minibatch), ("epochs", self.epochs), ("bptt_len", self.bptt_len), ("num_envs", self.num_envs)] {
            if v == 0 {
                return Err(Error::config(format!("ppo.{name}"), "must be positive"));
            }
        }
        if !self.horizon.is_multiple_of(self.bptt_len) {
            return Err(Error::config("ppo.bptt_len", format!("must divide horizon {}", self.horizon)));
        }
        if !self.minibatch.is_multiple_of(self.bptt_len) {
            return Err(Error::config("ppo.minibatch", format!("must be a multiple of bptt_len {}", self.bptt_len)));
        }
        if self.minibatch > self.horizon * self.num_envs {
            return Err(Error::config("ppo.minibatch", "exceeds horizon x num_envs"));
        }
        Ok(())
    }
}
