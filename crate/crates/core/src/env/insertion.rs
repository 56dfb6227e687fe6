use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{EnvConfig, Geometry, RandomizationConfig, SampledParams, ACTION_DIM};
use super::render::{render, Scene};
use super::tactile::{synth_tactile, FingerLoads};
use super::{Environment, ObsSpec, Observation, StepResult};
use crate::error::{Error, Result};

const POS_SCALE: f64 = 0.05;
const VEL_SCALE: f64 = 0.1;
const FORCE_SCALE: f64 = 5.0;
const TORQUE_SCALE: f64 = 0.15;
const SOCKET_SCALE: f64 = 0.01;
const MAX_YAW_WINDUP: f64 = 0.3;

/// Full simulator state. Positions are of the peg tip relative to the true
/// socket axis, with `z` measured up from the bore floor.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 3],
    pub yaw: f64,
    pub vel: [f64; 3],
    pub yaw_rate: f64,
    /// Compliance set point the peg is pulled towards.
    pub target: [f64; 3],
    pub yaw_target: f64,
    pub grasp_z: f64,
    pub grasp_xrot: f64,
    /// Sampled wrist roll/pitch; carried but not simulated.
    pub roll: f64,
    pub pitch: f64,
    /// True socket offset from its nominal pose.
    pub socket: [f64; 3],
    /// Socket offset as perceived.
    pub socket_observed: [f64; 3],
    pub stiffness: f64,
    pub damping: f64,
    pub steps: usize,
    pub grasped: bool,
    pub done: bool,
    /// Contact force on the peg averaged over the last control step, world frame.
    pub contact_force: [f64; 3],
}

impl EnvState {
    pub fn lateral_error(&self) -> f64 {
        self.pos[0].hypot(self.pos[1])
    }

    /// Depth of the tip below the top of the straight bore.
    pub fn insertion_depth(&self, geo: &Geometry) -> f64 {
        geo.bore_depth - self.pos[2]
    }
}

/// Diagnostics for one control step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    /// Force and torque about the grasp point, world frame.
    pub contact_wrench: [f64; 6],
    /// Normal load per finger `[left, right]`.
    pub finger_normal: [f64; 2],
    pub lateral_error: f64,
    pub depth: f64,
}

/// Surface height of the socket at radial distance `r` of the peg axis, or
/// `None` over the open bore.
fn surface_height(geo: &Geometry, r: f64) -> Option<f64> {
    let c = geo.clearance();
    (r > c).then(|| geo.bore_depth + (r - c).min(geo.chamfer_width) * geo.chamfer_slope_deg.to_radians().tan())
}

/// Penalty force on the peg tip from the socket, floor and walls.
pub fn contact_force(geo: &Geometry, stiffness: f64, p: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = p;
    let mut f = [0.0; 3];
    if z < 0.0 {
        f[2] += stiffness * -z;
    }
    let r = x.hypot(y);
    let c = geo.clearance();
    let Some(h) = surface_height(geo, r) else {
        return f;
    };
    let pen_top = h - z;
    if pen_top <= 0.0 {
        return f;
    }
    let radial = [x / r, y / r];
    let alpha = geo.chamfer_slope_deg.to_radians();
    let on_chamfer = r < c + geo.chamfer_width;
    let pen_surface = if on_chamfer { pen_top * alpha.cos() } else { pen_top };
    let pen_wall = if z < geo.bore_depth { r - c } else { f64::INFINITY };
    if pen_wall < pen_surface {
        f[0] -= stiffness * pen_wall * radial[0];
        f[1] -= stiffness * pen_wall * radial[1];
    } else if on_chamfer {
        f[0] -= stiffness * pen_surface * alpha.sin() * radial[0];
        f[1] -= stiffness * pen_surface * alpha.sin() * radial[1];
        f[2] += stiffness * pen_surface * alpha.cos();
    } else {
        f[2] += stiffness * pen_surface;
    }
    f
}

/// Per-episode RNG seed for `(run seed, env index, episode index)`.
pub fn episode_seed(run_seed: u64, env: u64, episode: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(run_seed) ^ env.wrapping_mul(0x9e3779b97f4a7c15)) ^ episode)
}

/// Planar-plus-depth peg insertion with compliant position control.
#[derive(Clone, Debug)]
pub struct InsertionEnv {
    cfg: EnvConfig,
    bounds: RandomizationConfig,
    state: EnvState,
    params: Option<SampledParams>,
    rng: ChaCha8Rng,
    info: StepInfo,
}

impl InsertionEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let bounds = cfg.effective_bounds();
        let mut env = InsertionEnv {
            cfg,
            bounds,
            state: EnvState {
                pos: [0.0; 3],
                yaw: 0.0,
                vel: [0.0; 3],
                yaw_rate: 0.0,
                target: [0.0; 3],
                yaw_target: 0.0,
                grasp_z: 0.0,
                grasp_xrot: 0.0,
                roll: 0.0,
                pitch: 0.0,
                socket: [0.0; 3],
                socket_observed: [0.0; 3],
                stiffness: 1.0,
                damping: 1.0,
                steps: 0,
                grasped: true,
                done: true,
                contact_force: [0.0; 3],
            },
            params: None,
            rng: ChaCha8Rng::seed_from_u64(0),
            info: StepInfo::default(),
        };
        env.state.done = true;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Replaces the state wholesale; used to construct test scenarios.
    pub fn set_state(&mut self, state: EnvState) {
        self.state = state;
    }

    pub fn sampled_params(&self) -> Option<&SampledParams> {
        self.params.as_ref()
    }

    pub fn last_info(&self) -> StepInfo {
        self.info
    }

    fn lever(&self) -> f64 {
        self.cfg.geometry.grasp_length + self.state.grasp_z
    }

    /// Contact force rotated into the gripper frame.
    fn gripper_force(&self) -> [f64; 3] {
        let [fx, fy, fz] = self.state.contact_force;
        let (s, c) = self.state.yaw.sin_cos();
        [c * fx + s * fy, -s * fx + c * fy, fz]
    }

    pub fn finger_loads(&self) -> FingerLoads {
        if !self.state.grasped {
            return FingerLoads::default();
        }
        FingerLoads::from_contact(
            self.gripper_force(),
            self.lever(),
            self.cfg.dynamics.grip_force,
            self.state.grasp_xrot,
            self.state.grasp_z,
        )
    }

    /// Noise-free pad fields for the current state.
    pub fn clean_tactile(&self) -> (Vec<f32>, Vec<f32>) {
        synth_tactile(self.cfg.tactile_size, &self.finger_loads(), self.cfg.dynamics.grip_force)
    }

    /// Pad fields with sensor noise; normal forces stay non-negative.
    pub fn tactile(&mut self) -> (Vec<f32>, Vec<f32>) {
        let (mut l, mut r) = self.clean_tactile();
        let sigma = self.cfg.tactile_noise;
        if sigma > 0.0 && self.state.grasped {
            let normal = Normal::new(0.0, sigma).expect("sigma validated");
            let plane = self.cfg.tactile_size * self.cfg.tactile_size;
            for field in [&mut l, &mut r] {
                for (k, v) in field.iter_mut().enumerate() {
                    *v += normal.sample(&mut self.rng) as f32;
                    if k >= 2 * plane {
                        *v = v.max(0.0);
                    }
                }
            }
        }
        (l, r)
    }

    pub fn scene(&self) -> Scene {
        let geo = &self.cfg.geometry;
        let s = &self.state;
        let top = geo.top_height();
        let mouth_radius = geo.bore_radius + geo.chamfer_width;
        let tip = [s.socket[0] + s.pos[0], s.socket[1] + s.pos[1], s.socket[2] + s.pos[2]];
        Scene {
            socket_mouth: [s.socket_observed[0], s.socket_observed[1], s.socket_observed[2] + top],
            mouth_radius,
            peg_tip: tip,
            peg_radius: geo.peg_radius,
            peg_length: geo.peg_length,
            occlusion_height: (s.lateral_error() < mouth_radius).then_some(s.socket[2] + top),
        }
    }

    pub fn render_wrist(&self) -> Vec<f32> {
        render(&self.scene(), self.cfg.image_size)
    }

    fn wrench(&self) -> [f64; 6] {
        let [fx, fy, fz] = self.state.contact_force;
        let l = self.lever();
        [fx, fy, fz, l * fy, -l * fx, 0.0]
    }

    pub fn privileged_vector(&self) -> Vec<f32> {
        let s = &self.state;
        let d = self.cfg.geometry.bore_depth;
        let noise = self.socket_noise();
        [
            s.pos[0] / POS_SCALE,
            s.pos[1] / POS_SCALE,
            (s.pos[2] - d) / POS_SCALE,
            s.yaw,
            s.vel[0] / VEL_SCALE,
            s.vel[1] / VEL_SCALE,
            s.vel[2] / VEL_SCALE,
            s.yaw_rate,
            s.grasp_z / 0.0125,
            s.grasp_xrot / 0.628,
            (s.socket[0] + noise[0]) / SOCKET_SCALE,
            (s.socket[1] + noise[1]) / SOCKET_SCALE,
            (s.socket[2] + noise[2]) / SOCKET_SCALE,
        ]
        .iter()
        .map(|&v| v as f32)
        .collect()
    }

    fn socket_noise(&self) -> [f64; 3] {
        let s = &self.state;
        [
            s.socket_observed[0] - s.socket[0],
            s.socket_observed[1] - s.socket[1],
            s.socket_observed[2] - s.socket[2],
        ]
    }

    /// Tip position relative to the perceived socket, plus yaw and velocities.
    pub fn proprio_vector(&self) -> Vec<f32> {
        let s = &self.state;
        let d = self.cfg.geometry.bore_depth;
        let noise = self.socket_noise();
        [
            (s.pos[0] - noise[0]) / POS_SCALE,
            (s.pos[1] - noise[1]) / POS_SCALE,
            (s.pos[2] - noise[2] - d) / POS_SCALE,
            s.yaw,
            s.vel[0] / VEL_SCALE,
            s.vel[1] / VEL_SCALE,
            s.vel[2] / VEL_SCALE,
            s.yaw_rate,
        ]
        .iter()
        .map(|&v| v as f32)
        .collect()
    }

    fn wrench_vector(&self) -> Vec<f32> {
        let w = self.wrench();
        let scale = [FORCE_SCALE, FORCE_SCALE, FORCE_SCALE, TORQUE_SCALE, TORQUE_SCALE, TORQUE_SCALE];
        w.iter().zip(scale).map(|(v, s)| (v / s) as f32).collect()
    }

    pub fn observe(&mut self) -> Observation {
        let mode = self.cfg.mode;
        let mut vector = if mode.privileged() { self.privileged_vector() } else { self.proprio_vector() };
        if mode.force() {
            vector.extend(self.wrench_vector());
        }
        let image = mode.image().then(|| self.render_wrist());
        let tactile = mode.tactile().then(|| {
            let (l, r) = self.tactile();
            [l, r]
        });
        Observation { vector, image, tactile }
    }

    /// Starts an episode from the sampled parameters.
    pub fn reset_to(&mut self, params: SampledParams) {
        let geo = &self.cfg.geometry;
        let b = &self.bounds;
        let socket = [
            params.socket_x - b.socket_x.mid(),
            params.socket_y - b.socket_y.mid(),
            params.socket_z - b.socket_z.mid(),
        ];
        let x = (params.ee_x - b.ee_x.mid()) - socket[0] + (b.ee_x.mid() - b.socket_x.mid());
        let y = (params.ee_y - b.ee_y.mid()) - socket[1] + (b.ee_y.mid() - b.socket_y.mid());
        let r = x.hypot(y);
        let floor = surface_height(geo, r).unwrap_or(geo.bore_depth) + 0.002;
        let z = (geo.top_height() + geo.approach_height + (params.ee_z - b.ee_z.mid()) - socket[2] - params.grasp_z).max(floor);
        let pos = [x, y, z];
        let yaw = params.ee_yaw - b.ee_yaw.mid();
        self.state = EnvState {
            pos,
            yaw,
            vel: [0.0; 3],
            yaw_rate: 0.0,
            target: pos,
            yaw_target: yaw,
            grasp_z: params.grasp_z,
            grasp_xrot: params.grasp_xrot,
            roll: params.ee_roll,
            pitch: params.ee_pitch,
            socket,
            socket_observed: [
                socket[0] + params.socket_obs_noise[0],
                socket[1] + params.socket_obs_noise[1],
                socket[2] + params.socket_obs_noise[2],
            ],
            stiffness: params.stiffness,
            damping: self.cfg.dynamics.base_damping + params.damping + params.joint_damping,
            steps: 0,
            grasped: true,
            done: false,
            contact_force: [0.0; 3],
        };
        self.params = Some(params);
        self.info = StepInfo { lateral_error: r, depth: geo.bore_depth - z, ..StepInfo::default() };
    }

    /// Advances the physics one control step towards the current targets.
    fn integrate(&mut self) {
        let dyn_cfg = &self.cfg.dynamics;
        let geo = &self.cfg.geometry;
        let s = &mut self.state;
        let h = dyn_cfg.control_dt / dyn_cfg.substeps as f64;
        let start = s.pos;
        let yaw_start = s.yaw;
        let mut force_sum = [0.0; 3];
        for _ in 0..dyn_cfg.substeps {
            let fc = contact_force(geo, dyn_cfg.contact_stiffness, s.pos);
            for a in 0..3 {
                let v = (s.stiffness * (s.target[a] - s.pos[a]) + fc[a]) / s.damping;
                s.pos[a] += h * v;
                force_sum[a] += fc[a];
            }
            s.yaw += h * dyn_cfg.yaw_stiffness * (s.yaw_target - s.yaw) / dyn_cfg.yaw_damping;
        }
        let n = dyn_cfg.substeps as f64;
        s.contact_force = force_sum.map(|f| f / n);
        for a in 0..3 {
            s.vel[a] = (s.pos[a] - start[a]) / dyn_cfg.control_dt;
        }
        s.yaw_rate = (s.yaw - yaw_start) / dyn_cfg.control_dt;
    }

    fn apply_action(&mut self, action: &[f32]) -> Result<()> {
        if action.len() != ACTION_DIM {
            return Err(Error::Env(format!("action has {} components, expected {ACTION_DIM}", action.len())));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Env(format!("non-finite action {action:?}")));
        }
        let a: Vec<f64> = action.iter().map(|&v| v.clamp(-1.0, 1.0) as f64).collect();
        let d = &self.cfg.dynamics;
        let s = &mut self.state;
        for k in 0..3 {
            let t = s.target[k] + a[k] * d.action_step;
            s.target[k] = t.clamp(s.pos[k] - d.target_windup, s.pos[k] + d.target_windup);
        }
        // a[3] and a[4] (roll, pitch) are accepted and ignored.
        let yt = s.yaw_target + a[5] * d.yaw_step;
        s.yaw_target = yt.clamp(s.yaw - MAX_YAW_WINDUP, s.yaw + MAX_YAW_WINDUP);
        Ok(())
    }

    /// Holds position for one control step without advancing the episode.
    pub fn hold(&mut self) {
        self.state.target = self.state.pos;
        self.state.yaw_target = self.state.yaw;
        self.integrate();
    }

    pub fn is_success(&self) -> bool {
        let s = &self.state;
        s.lateral_error() <= self.cfg.success.lateral_tolerance
            && s.insertion_depth(&self.cfg.geometry) >= self.cfg.success.depth_threshold
    }
}

impl Environment for InsertionEnv {
    fn spec(&self) -> ObsSpec {
        let mode = self.cfg.mode;
        ObsSpec {
            vector_dim: mode.vector_dim(),
            image: mode.image().then_some([3, self.cfg.image_size, self.cfg.image_size]),
            tactile: mode.tactile().then_some([3, self.cfg.tactile_size, self.cfg.tactile_size]),
        }
    }

    fn reset(&mut self, seed: u64) -> Result<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let params = self.bounds.sample(&mut self.rng);
        self.reset_to(params);
        Ok(self.observe())
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        if self.state.done {
            return Err(Error::StepAfterDone);
        }
        self.apply_action(action)?;
        self.integrate();
        self.state.steps += 1;
        let success = self.is_success();
        let done = success || self.state.steps >= self.cfg.success.max_episode_len;
        self.state.done = done;
        let loads = self.finger_loads();
        self.info = StepInfo {
            contact_wrench: self.wrench(),
            finger_normal: loads.normal,
            lateral_error: self.state.lateral_error(),
            depth: self.state.insertion_depth(&self.cfg.geometry),
        };
        let observation = self.observe();
        Ok(StepResult { observation, reward: if success { 1.0 } else { 0.0 }, done, success })
    }

    #[cfg(feature = "symmetry")]
    fn calibration_source(&mut self) -> Option<&mut dyn crate::symmetry::CalibrationSource> {
        self.cfg.mode.tactile().then_some(self as &mut dyn crate::symmetry::CalibrationSource)
    }
}

#[cfg(feature = "symmetry")]
impl crate::symmetry::CalibrationSource for InsertionEnv {
    fn grasped(&self) -> bool {
        self.state.grasped
    }

    fn hold_frame(&mut self) -> Result<(symfuse_autograd::Tensor, symfuse_autograd::Tensor)> {
        self.hold();
        let (l, r) = self.tactile();
        let n = self.cfg.tactile_size;
        Ok((symfuse_autograd::Tensor::new(l, &[3, n, n])?, symfuse_autograd::Tensor::new(r, &[3, n, n])?))
    }
}
