use symfuse_autograd::Tensor;

use crate::env::{Observation, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::LstmState;
use crate::ppo::gae::gae;

/// One iteration of experience from `num_envs` environments, stored
/// time-major (`t·E + e`).
#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    pub horizon: usize,
    pub num_envs: usize,
    pub chunk_len: usize,
    pub observations: Vec<Observation>,
    pub actions: Vec<[f32; ACTION_DIM]>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    pub rewards: Vec<f32>,
    /// Episode ended after this step.
    pub dones: Vec<bool>,
    /// Episode began at this step, so the carried state was zeroed before it.
    pub starts: Vec<bool>,
    /// Recurrent state entering each chunk, batched over environments.
    pub snapshots: Vec<LstmState>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
}

/// A minibatch of whole chunks, ready for [`crate::ppo::PolicyNet::unroll`].
#[derive(Clone, Debug)]
pub struct Minibatch<'a> {
    /// Time-major observation references, `chunk_len × chunks`.
    pub observations: Vec<&'a Observation>,
    pub start: LstmState,
    pub masks: Vec<Vec<f32>>,
    pub actions: Tensor,
    pub old_log_prob: Tensor,
    pub advantages: Vec<f32>,
    pub returns: Tensor,
}

impl RolloutBuffer {
    pub fn new(horizon: usize, num_envs: usize, chunk_len: usize) -> Result<Self> {
        if chunk_len == 0 || !horizon.is_multiple_of(chunk_len) {
            return Err(Error::config("ppo.bptt_len", format!("must divide horizon {horizon}")));
        }
        let n = horizon * num_envs;
        Ok(RolloutBuffer {
            horizon,
            num_envs,
            chunk_len,
            observations: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            starts: Vec::with_capacity(n),
            snapshots: Vec::with_capacity(horizon / chunk_len),
            advantages: Vec::new(),
            returns: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.horizon * self.num_envs
    }

    /// Advantages and returns from per-environment GAE; `last_values` are
    /// the bootstrap values after the final step.
    pub fn finish(&mut self, last_values: &[f32], gamma: f64, lambda: f64) -> Result<()> {
        if !self.is_full() || last_values.len() != self.num_envs {
            return Err(Error::Numerical {
                msg: format!("buffer holds {} of {} steps with {} bootstrap values", self.len(), self.horizon * self.num_envs, last_values.len()),
                dump: None,
            });
        }
        let (t_len, e_len) = (self.horizon, self.num_envs);
        self.advantages = vec![0.0; t_len * e_len];
        self.returns = vec![0.0; t_len * e_len];
        for e in 0..e_len {
            let idx = |t: usize| t * e_len + e;
            let rewards: Vec<f64> = (0..t_len).map(|t| self.rewards[idx(t)] as f64).collect();
            let mut values: Vec<f64> = (0..t_len).map(|t| self.values[idx(t)] as f64).collect();
            values.push(last_values[e] as f64);
            let dones: Vec<bool> = (0..t_len).map(|t| self.dones[idx(t)]).collect();
            let (adv, ret) = gae(&rewards, &values, &dones, gamma, lambda)?;
            for t in 0..t_len {
                self.advantages[idx(t)] = adv[t] as f32;
                self.returns[idx(t)] = ret[t] as f32;
            }
        }
        Ok(())
    }

    pub fn num_chunks(&self) -> usize {
        self.num_envs * self.horizon / self.chunk_len
    }

    /// Gathers chunks given as `(env, chunk index)` pairs.
    pub fn minibatch(&self, chunks: &[(usize, usize)]) -> Result<Minibatch<'_>> {
        let (l, e_len, m) = (self.chunk_len, self.num_envs, chunks.len());
        let n = l * m;
        let mut observations = Vec::with_capacity(n);
        let mut masks = vec![vec![1.0f32; m]; l];
        let mut actions = Vec::with_capacity(n * ACTION_DIM);
        let (mut old, mut adv, mut ret) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for t in 0..l {
            for (j, &(e, c)) in chunks.iter().enumerate() {
                let i = (c * l + t) * e_len + e;
                observations.push(&self.observations[i]);
                if t > 0 && self.starts[i] {
                    masks[t][j] = 0.0;
                }
                actions.extend_from_slice(&self.actions[i]);
                old.push(self.log_probs[i]);
                adv.push(self.advantages[i]);
                ret.push(self.returns[i]);
            }
        }
        let layers = self.snapshots[0].h.len();
        let mut start = LstmState { h: Vec::with_capacity(layers), c: Vec::with_capacity(layers) };
        for layer in 0..layers {
            let hidden = self.snapshots[0].h[layer].shape()[1];
            let (mut h, mut c) = (Vec::with_capacity(m * hidden), Vec::with_capacity(m * hidden));
            for &(e, chunk) in chunks {
                let snap = &self.snapshots[chunk];
                h.extend_from_slice(&snap.h[layer].data()[e * hidden..(e + 1) * hidden]);
                c.extend_from_slice(&snap.c[layer].data()[e * hidden..(e + 1) * hidden]);
            }
            start.h.push(Tensor::new(h, &[m, hidden])?);
            start.c.push(Tensor::new(c, &[m, hidden])?);
        }
        Ok(Minibatch {
            observations,
            start,
            masks,
            actions: Tensor::new(actions, &[n, ACTION_DIM])?,
            old_log_prob: Tensor::new(old, &[n])?,
            advantages: adv,
            returns: Tensor::new(ret, &[n])?,
        })
    }
}
