//! Peg-in-hole insertion environment and a 1-D probe task.

pub mod config;
pub mod insertion;
pub mod probe;
pub mod render;
pub mod tactile;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{Bound, EnvConfig, ObsMode, RandomizationConfig, ACTION_DIM};
pub use insertion::{episode_seed, EnvState, InsertionEnv, StepInfo};
pub use probe::ProbeEnv;

/// Shapes of the observation parts an environment emits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsSpec {
    pub vector_dim: usize,
    pub image: Option<[usize; 3]>,
    pub tactile: Option<[usize; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Privileged state or proprioception, optionally followed by the
    /// contact wrench.
    pub vector: Vec<f32>,
    /// Wrist image `[3,S,S]`, values in `[0,1]`.
    pub image: Option<Vec<f32>>,
    /// Left and right pad fields, each `[3,T,T]` in N per taxel.
    pub tactile: Option<[Vec<f32>; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f32,
    pub done: bool,
    pub success: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> ObsSpec;
    fn reset(&mut self, seed: u64) -> Result<Observation>;
    fn step(&mut self, action: &[f32]) -> Result<StepResult>;

    /// Hold-still access for measured tactile calibration, when supported.
    #[cfg(feature = "symmetry")]
    fn calibration_source(&mut self) -> Option<&mut dyn crate::symmetry::CalibrationSource> {
        None
    }
}

/// Result of one finished episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub episode_return: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessMetrics {
    pub success_rate: f64,
    /// Averaged over successful episodes only; absent when none succeeded.
    pub mean_steps_to_succeed: Option<f64>,
}

pub fn success_metrics(episodes: &[EpisodeOutcome]) -> Result<SuccessMetrics> {
    if episodes.is_empty() {
        return Err(Error::Env("success metrics need at least one episode".into()));
    }
    let steps: Vec<f64> = episodes.iter().filter(|e| e.success).map(|e| e.steps as f64).collect();
    Ok(SuccessMetrics {
        success_rate: steps.len() as f64 / episodes.len() as f64,
        mean_steps_to_succeed: (!steps.is_empty()).then(|| steps.iter().sum::<f64>() / steps.len() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(success: bool, steps: usize) -> EpisodeOutcome {
        EpisodeOutcome { seed: 0, success, steps, episode_return: if success { 1.0 } else { 0.0 } }
    }

    #[test]
    fn metrics_arithmetic() {
        let m = success_metrics(&[ep(true, 10), ep(true, 20), ep(false, 128)]).unwrap();
        assert!((m.success_rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.mean_steps_to_succeed, Some(15.0));
    }

    #[test]
    fn all_failures_have_no_mean() {
        let m = success_metrics(&[ep(false, 128), ep(false, 128)]).unwrap();
        assert_eq!(m.success_rate, 0.0);
        assert_eq!(m.mean_steps_to_succeed, None);
    }

    #[test]
    fn empty_is_error() {
        assert!(success_metrics(&[]).is_err());
    }
}
