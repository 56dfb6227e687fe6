use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Bound { lo, hi }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Shrinks (or widens) the interval about its midpoint.
    pub fn scaled(&self, factor: f64) -> Bound {
        let (m, h) = (self.mid(), 0.5 * (self.hi - self.lo) * factor);
        Bound { lo: m - h, hi: m + h }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi == self.lo {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Uniform randomization bounds, one row per perturbed quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationConfig {
    pub ee_x: Bound,
    pub ee_y: Bound,
    pub ee_z: Bound,
    pub ee_roll: Bound,
    pub ee_pitch: Bound,
    pub ee_yaw: Bound,
    pub socket_x: Bound,
    pub socket_y: Bound,
    pub socket_z: Bound,
    pub grasp_z: Bound,
    pub grasp_xrot: Bound,
    pub socket_obs_noise: Bound,
    pub stiffness: Bound,
    pub damping: Bound,
    pub joint_damping: Bound,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            ee_x: Bound::new(0.4, 0.6),
            ee_y: Bound::new(-0.1, 0.1),
            ee_z: Bound::new(0.1, 0.2),
            ee_roll: Bound::new(3.04, 3.24),
            ee_pitch: Bound::new(-0.1, 0.1),
            ee_yaw: Bound::new(-1.0, 1.0),
            socket_x: Bound::new(0.4, 0.6),
            socket_y: Bound::new(-0.1, 0.1),
            socket_z: Bound::new(0.0, 0.02),
            grasp_z: Bound::new(-0.0125, 0.0125),
            grasp_xrot: Bound::new(-0.628, 0.628),
            socket_obs_noise: Bound::new(-0.005, 0.005),
            stiffness: Bound::new(150.0, 350.0),
            damping: Bound::new(0.0, 1.0),
            joint_damping: Bound::new(-1.5, 1.5),
        }
    }
}

impl RandomizationConfig {
    pub fn rows(&self) -> [(&'static str, Bound); 15] {
        [
            ("ee_x", self.ee_x),
            ("ee_y", self.ee_y),
            ("ee_z", self.ee_z),
            ("ee_roll", self.ee_roll),
            ("ee_pitch", self.ee_pitch),
            ("ee_yaw", self.ee_yaw),
            ("socket_x", self.socket_x),
            ("socket_y", self.socket_y),
            ("socket_z", self.socket_z),
            ("grasp_z", self.grasp_z),
            ("grasp_xrot", self.grasp_xrot),
            ("socket_obs_noise", self.socket_obs_noise),
            ("stiffness", self.stiffness),
            ("damping", self.damping),
            ("joint_damping", self.joint_damping),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in self.rows() {
            if !(b.lo.is_finite() && b.hi.is_finite()) || b.lo > b.hi {
                return Err(Error::config(format!("env.randomization.{name}"), format!("degenerate bound [{}, {}]", b.lo, b.hi)));
            }
        }
        if self.stiffness.lo <= 0.0 {
            return Err(Error::config("env.randomization.stiffness", "must be positive"));
        }
        Ok(())
    }

    /// Pose rows (end effector and socket) scaled about their midpoints.
    pub fn scaled(&self, desk_scale: f64) -> RandomizationConfig {
        let s = |b: Bound| b.scaled(desk_scale);
        RandomizationConfig {
            ee_x: s(self.ee_x),
            ee_y: s(self.ee_y),
            ee_z: s(self.ee_z),
            ee_roll: s(self.ee_roll),
            ee_pitch: s(self.ee_pitch),
            ee_yaw: s(self.ee_yaw),
            socket_x: s(self.socket_x),
            socket_y: s(self.socket_y),
            socket_z: s(self.socket_z),
            ..self.clone()
        }
    }

    /// Every row collapsed to its midpoint.
    pub fn nominal(&self) -> RandomizationConfig {
        self.scaled(0.0)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> SampledParams {
        // Fixed draw order keeps episodes reproducible across versions.
        SampledParams {
            ee_x: self.ee_x.sample(rng),
            ee_y: self.ee_y.sample(rng),
            ee_z: self.ee_z.sample(rng),
            ee_roll: self.ee_roll.sample(rng),
            ee_pitch: self.ee_pitch.sample(rng),
            ee_yaw: self.ee_yaw.sample(rng),
            socket_x: self.socket_x.sample(rng),
            socket_y: self.socket_y.sample(rng),
            socket_z: self.socket_z.sample(rng),
            grasp_z: self.grasp_z.sample(rng),
            grasp_xrot: self.grasp_xrot.sample(rng),
            socket_obs_noise: [
                self.socket_obs_noise.sample(rng),
                self.socket_obs_noise.sample(rng),
                self.socket_obs_noise.sample(rng),
            ],
            stiffness: self.stiffness.sample(rng),
            damping: self.damping.sample(rng),
            joint_damping: self.joint_damping.sample(rng),
        }
    }
}

/// One draw from [`RandomizationConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampledParams {
    pub ee_x: f64,
    pub ee_y: f64,
    pub ee_z: f64,
    pub ee_roll: f64,
    pub ee_pitch: f64,
    pub ee_yaw: f64,
    pub socket_x: f64,
    pub socket_y: f64,
    pub socket_z: f64,
    pub grasp_z: f64,
    pub grasp_xrot: f64,
    pub socket_obs_noise: [f64; 3],
    pub stiffness: f64,
    pub damping: f64,
    pub joint_damping: f64,
}

impl SampledParams {
    /// Values in the same order as [`RandomizationConfig::rows`] (first noise
    /// component only).
    pub fn values(&self) -> [f64; 15] {
        [
            self.ee_x,
            self.ee_y,
            self.ee_z,
            self.ee_roll,
            self.ee_pitch,
            self.ee_yaw,
            self.socket_x,
            self.socket_y,
            self.socket_z,
            self.grasp_z,
            self.grasp_xrot,
            self.socket_obs_noise[0],
            self.stiffness,
            self.damping,
            self.joint_damping,
        ]
    }
}

/// Which sensors feed the policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsMode {
    #[default]
    Privileged,
    #[serde(rename = "privileged+force", alias = "privileged-force")]
    PrivilegedForce,
    Tactile,
    Wrist,
    #[serde(rename = "wrist+force", alias = "wrist-force")]
    WristForce,
    Fusion,
}

impl ObsMode {
    pub fn name(self) -> &'static str {
        match self {
            ObsMode::Privileged => "privileged",
            ObsMode::PrivilegedForce => "privileged+force",
            ObsMode::Tactile => "tactile",
            ObsMode::Wrist => "wrist",
            ObsMode::WristForce => "wrist+force",
            ObsMode::Fusion => "fusion",
        }
    }

    pub fn privileged(self) -> bool {
        matches!(self, ObsMode::Privileged | ObsMode::PrivilegedForce)
    }

    pub fn force(self) -> bool {
        matches!(self, ObsMode::PrivilegedForce | ObsMode::WristForce)
    }

    pub fn image(self) -> bool {
        matches!(self, ObsMode::Wrist | ObsMode::WristForce | ObsMode::Fusion)
    }

    pub fn tactile(self) -> bool {
        matches!(self, ObsMode::Tactile | ObsMode::Fusion)
    }

    /// Length of the flat observation vector in this mode.
    pub fn vector_dim(self) -> usize {
        let base = if self.privileged() { PRIVILEGED_DIM } else { PROPRIO_DIM };
        base + if self.force() { WRENCH_DIM } else { 0 }
    }
}

pub const PRIVILEGED_DIM: usize = 13;
pub const PROPRIO_DIM: usize = 8;
pub const WRENCH_DIM: usize = 6;
pub const ACTION_DIM: usize = 6;

/// Peg, bore and chamfer dimensions (meters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub peg_radius: f64,
    pub bore_radius: f64,
    pub bore_depth: f64,
    /// Radial width of the conical lead-in around the bore.
    pub chamfer_width: f64,
    pub chamfer_slope_deg: f64,
    /// Peg length visible between the tip and the fingers.
    pub peg_length: f64,
    /// Distance from the grasp point to the tip at zero grasp offset.
    pub grasp_length: f64,
    /// Nominal tip height above the socket top at reset.
    pub approach_height: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            peg_radius: 0.004,
            bore_radius: 0.0055,
            bore_depth: 0.020,
            chamfer_width: 0.030,
            chamfer_slope_deg: 30.0,
            peg_length: 0.050,
            grasp_length: 0.030,
            approach_height: 0.040,
        }
    }
}

impl Geometry {
    /// Lateral play of the peg axis inside the bore.
    pub fn clearance(&self) -> f64 {
        self.bore_radius - self.peg_radius
    }

    pub fn chamfer_height(&self) -> f64 {
        self.chamfer_width * self.chamfer_slope_deg.to_radians().tan()
    }

    /// Height of the socket's top face above the bore floor.
    pub fn top_height(&self) -> f64 {
        self.bore_depth + self.chamfer_height()
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("peg_radius", self.peg_radius),
            ("bore_depth", self.bore_depth),
            ("chamfer_slope_deg", self.chamfer_slope_deg),
            ("peg_length", self.peg_length),
            ("grasp_length", self.grasp_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(format!("env.geometry.{name}"), "must be positive"));
            }
        }
        if self.clearance() <= 0.0 {
            return Err(Error::config("env.geometry.bore_radius", "must exceed peg_radius"));
        }
        if self.chamfer_width < 0.0 || self.chamfer_slope_deg >= 90.0 {
            return Err(Error::config("env.geometry.chamfer_width", "invalid chamfer"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dynamics {
    /// Seconds per policy step.
    pub control_dt: f64,
    pub substeps: usize,
    /// Admittance damping before randomized noise, N/(m/s).
    pub base_damping: f64,
    /// Penalty contact stiffness, N/m.
    pub contact_stiffness: f64,
    /// Commanded translation per unit action, meters.
    pub action_step: f64,
    /// Commanded yaw per unit action, radians.
    pub yaw_step: f64,
    /// Maximum distance of the compliance target from the peg, meters.
    pub target_windup: f64,
    pub yaw_stiffness: f64,
    pub yaw_damping: f64,
    /// Finger preload, N per finger.
    pub grip_force: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Dynamics {
            control_dt: 0.05,
            substeps: 25,
            base_damping: 8.0,
            contact_stiffness: 3000.0,
            action_step: 0.010,
            yaw_step: 0.1,
            target_windup: 0.015,
            yaw_stiffness: 2.0,
            yaw_damping: 0.05,
            grip_force: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessCriteria {
    pub lateral_tolerance: f64,
    pub depth_threshold: f64,
    pub max_episode_len: usize,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        SuccessCriteria { lateral_tolerance: 0.002, depth_threshold: 0.010, max_episode_len: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub mode: ObsMode,
    /// Scale on the pose randomization rows; 1 is the full table.
    pub desk_scale: f64,
    pub randomization: RandomizationConfig,
    pub geometry: Geometry,
    pub dynamics: Dynamics,
    pub success: SuccessCriteria,
    /// Square wrist image side, pixels.
    pub image_size: usize,
    /// Square tactile pad side, taxels.
    pub tactile_size: usize,
    /// Per-taxel Gaussian noise, N.
    pub tactile_noise: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            mode: ObsMode::Privileged,
            desk_scale: 0.5,
            randomization: RandomizationConfig::default(),
            geometry: Geometry::default(),
            dynamics: Dynamics::default(),
            success: SuccessCriteria::default(),
            image_size: 64,
            tactile_size: 32,
            tactile_noise: 0.005,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.randomization.validate()?;
        self.geometry.validate()?;
        if !(self.desk_scale >= 0.0 && self.desk_scale.is_finite()) {
            return Err(Error::config("env.desk_scale", "must be finite and >= 0"));
        }
        if self.success.max_episode_len == 0 {
            return Err(Error::config("env.success.max_episode_len", "must be positive"));
        }
        if self.dynamics.substeps == 0 || !(self.dynamics.control_dt > 0.0) {
            return Err(Error::config("env.dynamics", "control_dt and substeps must be positive"));
        }
        if self.image_size < 8 || self.tactile_size < 4 {
            return Err(Error::config("env.image_size", "image >= 8 and tactile >= 4 pixels"));
        }
        if !(self.tactile_noise >= 0.0) {
            return Err(Error::config("env.tactile_noise", "must be >= 0"));
        }
        Ok(())
    }

    /// Bounds actually sampled at reset.
    pub fn effective_bounds(&self) -> RandomizationConfig {
        self.randomization.scaled(self.desk_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_keeps_midpoint() {
        let b = Bound::new(0.4, 0.6).scaled(0.5);
        assert!((b.lo - 0.45).abs() < 1e-12 && (b.hi - 0.55).abs() < 1e-12);
        let r = RandomizationConfig::default().scaled(0.5);
        assert_eq!(r.stiffness, Bound::new(150.0, 350.0));
    }

    #[test]
    fn degenerate_bound_rejected() {
        let mut r = RandomizationConfig::default();
        r.socket_z = Bound::new(0.1, 0.0);
        let err = r.validate().unwrap_err();
        assert!(err.to_string().contains("socket_z"));
    }

    #[test]
    fn mode_dims() {
        assert_eq!(ObsMode::Privileged.vector_dim(), 13);
        assert_eq!(ObsMode::PrivilegedForce.vector_dim(), 19);
        assert_eq!(ObsMode::Tactile.vector_dim(), 8);
        assert_eq!(ObsMode::WristForce.vector_dim(), 14);
    }
}
