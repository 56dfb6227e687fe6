use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::Profile;
use crate::env::{EnvConfig, ObsMode};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::ppo::{PolicyConfig, PpoConfig};
use crate::sym_config::SymmetryOptions;

/// Everything one training invocation needs.
///
/// `mode` and `fusion` at the top level override `env.mode` and
/// `policy.fusion`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ObsMode,
    pub fusion: Option<FusionStrategy>,
    pub lambda_sym: f64,
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub symmetry: SymmetryOptions,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Environment-step budget per seed. Training runs as many whole
    /// iterations of `horizon × num_envs` steps as fit inside it.
    pub total_steps: u64,
    /// Deterministic evaluation episodes run after training.
    pub eval_episodes: usize,
    /// Save a checkpoint every this many iterations; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: ObsMode::Privileged,
            fusion: None,
            lambda_sym: 0.0,
            ppo: PpoConfig::default(),
            env: EnvConfig { image_size: 32, tactile_size: 16, ..EnvConfig::default() },
            policy: PolicyConfig { profile: Profile::Desk, ..PolicyConfig::default() },
            symmetry: SymmetryOptions::default(),
            seeds: vec![0],
            out_dir: PathBuf::from("runs/default"),
            total_steps: 200_000,
            eval_episodes: 256,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(json_field(&e), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Environment config with the top-level mode applied.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig { mode: self.mode, ..self.env.clone() }
    }

    /// Policy config with the top-level fusion strategy applied.
    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig { fusion: self.fusion, ..self.policy.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let fusion_mode = self.mode == ObsMode::Fusion;
        match (fusion_mode, self.fusion) {
            (true, None) => return Err(Error::config("fusion", "mode `fusion` requires a fusion strategy (naive, gated or cmt)")),
            (false, Some(_)) => return Err(Error::config("fusion", format!("a fusion strategy is only valid with mode `fusion`, not `{}`", self.mode.name()))),
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if !(self.lambda_sym >= 0.0 && self.lambda_sym.is_finite()) {
            return Err(Error::config("lambda_sym", format!("must be finite and >= 0, got {}", self.lambda_sym)));
        }
        if self.lambda_sym > 0.0 && !self.mode.tactile() {
            return Err(Error::config("lambda_sym", "the symmetry loss needs a mode with tactile observations"));
        }
        if self.lambda_sym > 0.0 && cfg!(not(feature = "symmetry")) {
            return Err(Error::config("lambda_sym", "this build has the symmetry regularizer compiled out"));
        }
        let rollout = (self.ppo.horizon * self.ppo.num_envs) as u64;
        if self.total_steps < rollout {
            return Err(Error::config("total_steps", format!("{} is smaller than one rollout of {rollout} steps", self.total_steps)));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be at least 1"));
        }
        self.ppo.validate()?;
        self.env_config().validate()?;
        let profile = self.policy.profile;
        if self.mode.image() && self.env.image_size != profile.vision().height {
            return Err(Error::config(
                "env.image_size",
                format!("{} does not match the {:?} vision encoder input {}", self.env.image_size, profile, profile.vision().height),
            ));
        }
        if self.mode.tactile() && self.env.tactile_size != profile.tactile().height {
            return Err(Error::config(
                "env.tactile_size",
                format!("{} does not match the {:?} tactile encoder input {}", self.env.tactile_size, profile, profile.tactile().height),
            ));
        }
        Ok(())
    }
}

fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde reports unknown and missing fields with the name in backticks.
    match msg.split('`').nth(1) {
        Some(name) if msg.contains("field") => name.to_string(),
        _ => format!("line {} column {}", e.line(), e.column()),
    }
}
