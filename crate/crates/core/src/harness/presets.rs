use std::path::PathBuf;

use crate::env::{EnvConfig, ObsMode};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::harness::config::RunConfig;
use crate::ppo::{PolicyConfig, PpoConfig};

/// One ablation row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    /// Row label of the success-rate table.
    pub label: &'static str,
    pub mode: ObsMode,
    pub fusion: Option<FusionStrategy>,
    pub lambda_sym: f64,
}

pub const PRESETS: [Preset; 10] = [
    Preset { name: "privileged", label: "Privileged", mode: ObsMode::Privileged, fusion: None, lambda_sym: 0.0 },
    Preset { name: "privileged+force", label: "+ Contact forces", mode: ObsMode::PrivilegedForce, fusion: None, lambda_sym: 0.0 },
    Preset { name: "tactile", label: "Tactile", mode: ObsMode::Tactile, fusion: None, lambda_sym: 0.0 },
    Preset { name: "wrist", label: "Wrist", mode: ObsMode::Wrist, fusion: None, lambda_sym: 0.0 },
    Preset { name: "wrist+force", label: "Wrist + Contact forces", mode: ObsMode::WristForce, fusion: None, lambda_sym: 0.0 },
    Preset { name: "fusion-naive", label: "Fusion - Naive", mode: ObsMode::Fusion, fusion: Some(FusionStrategy::Naive), lambda_sym: 0.0 },
    Preset { name: "fusion-gated", label: "Fusion - Gated (lambda_sym=0)", mode: ObsMode::Fusion, fusion: Some(FusionStrategy::Gated), lambda_sym: 0.0 },
    Preset { name: "fusion-cmt", label: "Fusion - CMT (lambda_sym=0)", mode: ObsMode::Fusion, fusion: Some(FusionStrategy::Cmt), lambda_sym: 0.0 },
    Preset {
        name: "fusion-gated-sym",
        label: "Fusion - Gated + Symmetry regularization (lambda_sym=1)",
        mode: ObsMode::Fusion,
        fusion: Some(FusionStrategy::Gated),
        lambda_sym: 1.0,
    },
    Preset {
        name: "fusion-cmt-sym",
        label: "Fusion - CMT + Symmetry regularization (lambda_sym=1)",
        mode: ObsMode::Fusion,
        fusion: Some(FusionStrategy::Cmt),
        lambda_sym: 1.0,
    },
];

/// PPO settings used at desk scale: longer rollouts per update and a larger
/// step size than the table, for the 16-environment sparse-reward budget.
pub fn desk_ppo() -> PpoConfig {
    PpoConfig { lr: 1e-3, horizon: 512, minibatch: 1024, ..PpoConfig::default() }
}

pub fn find(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::config("preset", format!("unknown preset `{name}`; expected one of {}", names.join(", ")))
    })
}

impl Preset {
    pub fn config(&self) -> RunConfig {
        let base = RunConfig::default();
        RunConfig {
            mode: self.mode,
            fusion: self.fusion,
            lambda_sym: self.lambda_sym,
            ppo: desk_ppo(),
            // Nested copies of mode and fusion; the top-level fields win.
            env: EnvConfig { mode: self.mode, ..base.env.clone() },
            policy: PolicyConfig { fusion: self.fusion, ..base.policy.clone() },
            out_dir: PathBuf::from(format!("runs/{}", self.name)),
            seeds: vec![0, 1, 2],
            ..base
        }
    }
}
