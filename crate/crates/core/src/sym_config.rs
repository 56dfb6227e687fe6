//! Options of the symmetry regularizer and tactile calibration. Always
//! compiled so configs parse the same with or without the regularizer.

use serde::{Deserialize, Serialize};

/// How the reference is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    /// Zero reference.
    #[default]
    Symmetric,
    /// Mean of `hold_steps` frames recorded while holding still after grasping.
    Measured,
}

/// Pad axis mirrored before the right finger is encoded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Taxel rows (H).
    #[default]
    Rows,
    /// Taxel columns (W).
    Cols,
}

/// Which codes the regularizer compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetrySpace {
    /// Encoder outputs `h`.
    #[default]
    Backbone,
    /// Tokens after the cross-modal transformer's tactile self-attention.
    Attended,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymmetryOptions {
    pub axis: FlipAxis,
    pub space: SymmetrySpace,
    pub calibration: CalibrationMode,
    /// Frames averaged by measured calibration.
    pub hold_steps: usize,
}

impl Default for SymmetryOptions {
    fn default() -> Self {
        SymmetryOptions { axis: FlipAxis::Rows, space: SymmetrySpace::Backbone, calibration: CalibrationMode::Symmetric, hold_steps: 10 }
    }
}
