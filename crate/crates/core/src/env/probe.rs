//! One-dimensional "move to the origin" task with a closed-form optimum,
//! used to check that the trainer learns at all.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, ObsSpec, Observation, StepResult, ACTION_DIM};
use crate::error::{Error, Result};

/// Position change per unit of action component 0.
pub const PROBE_STEP: f64 = 0.25;
pub const PROBE_EPISODE_LEN: usize = 16;

#[derive(Clone, Debug)]
pub struct ProbeEnv {
    x: f64,
    start: f64,
    steps: usize,
    done: bool,
}

impl Default for ProbeEnv {
    fn default() -> Self {
        ProbeEnv { x: 0.0, start: 0.0, steps: 0, done: true }
    }
}

fn reward(x: f64) -> f64 {
    1.0 - x.abs().min(1.0)
}

impl ProbeEnv {
    pub fn start(&self) -> f64 {
        self.start
    }

    /// Best achievable return from `x0`: move at full speed, then stay.
    pub fn optimal_return(x0: f64) -> f64 {
        (1..=PROBE_EPISODE_LEN).map(|t| reward((x0.abs() - PROBE_STEP * t as f64).max(0.0))).sum()
    }

    fn observe(&self) -> Observation {
        Observation { vector: vec![self.x as f32], image: None, tactile: None }
    }
}

impl Environment for ProbeEnv {
    fn spec(&self) -> ObsSpec {
        ObsSpec { vector_dim: 1, image: None, tactile: None }
    }

    fn reset(&mut self, seed: u64) -> Result<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.x = rng.random_range(-1.0..=1.0);
        self.start = self.x;
        self.steps = 0;
        self.done = false;
        Ok(self.observe())
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        if action.len() != ACTION_DIM || !action[0].is_finite() {
            return Err(Error::Env(format!("bad probe action {action:?}")));
        }
        self.x = (self.x + PROBE_STEP * action[0].clamp(-1.0, 1.0) as f64).clamp(-2.0, 2.0);
        self.steps += 1;
        self.done = self.steps >= PROBE_EPISODE_LEN;
        Ok(StepResult { observation: self.observe(), reward: reward(self.x) as f32, done: self.done, success: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_controller_attains_optimum() {
        for seed in 0..20 {
            let mut env = ProbeEnv::default();
            env.reset(seed).unwrap();
            let mut ret = 0.0;
            loop {
                let a = (-env.x / PROBE_STEP).clamp(-1.0, 1.0) as f32;
                let r = env.step(&[a, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
                ret += r.reward as f64;
                if r.done {
                    break;
                }
            }
            let opt = ProbeEnv::optimal_return(env.start());
            assert!((ret - opt).abs() < 1e-5, "{ret} vs {opt}");
        }
    }
}
