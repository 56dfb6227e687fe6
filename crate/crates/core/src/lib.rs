//! Visuo-tactile insertion policies: modality encoders, fusion heads, the
//! bilateral symmetry regularizer, a desk-scale insertion environment, a
//! recurrent PPO trainer, and the experiment harness around them.

pub mod encoders;
pub mod env;
pub mod error;
pub mod fusion;
pub mod nn;
pub mod harness;
pub mod ppo;
pub mod sym_config;
#[cfg(feature = "symmetry")]
pub mod symmetry;

pub use error::{Error, Result};
