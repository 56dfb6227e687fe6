//! Bilateral tactile force fields synthesized from the scalar contact model.
//!
//! Pads lie in the gripper's y-z plane, squeezing along x. Taxel rows run along
//! the gripper y axis and columns along z (bottom to top). The right pad is
//! mounted rotated 180° about z, so in its own frame the row order and the
//! sign of the row-axis shear are reversed. Channels are `[f_row, f_col,
//! f_normal]`.

/// Half side length of a pad, meters.
pub const PAD_HALF: f64 = 0.010;
/// Footprint half-width at nominal preload, meters.
const FOOTPRINT_SIGMA: f64 = 0.0015;
/// Peg top end along the peg axis, measured from the pad centre at zero grasp offset.
const PEG_TOP_OFFSET: f64 = 0.004;

/// Loads carried by the fingers, expressed in the gripper frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FingerLoads {
    pub grasped: bool,
    /// Normal force per finger `[left, right]`, N.
    pub normal: [f64; 2],
    /// Force on each pad along gripper y and z, N.
    pub shear: [f64; 2],
    /// Torque about the pinch axis shared by both pads, N·m.
    pub twist: f64,
    /// Torque about gripper y, N·m; shifts the pressure centroids in opposite
    /// directions along z.
    pub tilt: f64,
    /// Peg axis angle within the pad plane, radians.
    pub grasp_xrot: f64,
    /// Peg shift along its axis inside the grasp, meters.
    pub grasp_z: f64,
}

impl FingerLoads {
    /// Splits an external force on the peg (gripper frame) between the fingers.
    pub fn from_contact(force: [f64; 3], lever: f64, grip_force: f64, grasp_xrot: f64, grasp_z: f64) -> Self {
        let [fx, fy, fz] = force;
        FingerLoads {
            grasped: true,
            normal: [(grip_force - 0.5 * fx).max(0.0), (grip_force + 0.5 * fx).max(0.0)],
            shear: [0.5 * fy, 0.5 * fz],
            twist: lever * fy,
            tilt: -lever * fx,
            grasp_xrot,
            grasp_z,
        }
    }
}

/// Taxel centre coordinates along one pad axis.
pub fn taxel_coords(n: usize) -> Vec<f64> {
    let d = 2.0 * PAD_HALF / n as f64;
    (0..n).map(|i| -PAD_HALF + (i as f64 + 0.5) * d).collect()
}

/// Normalized contact footprint on one pad in gripper `(y, z)` coordinates,
/// row-major `[n_y, n_z]`, summing to 1.
fn footprint(n: usize, normal: f64, grip_force: f64, centroid_shift: f64, loads: &FingerLoads) -> Vec<f64> {
    let coords = taxel_coords(n);
    let sigma = FOOTPRINT_SIGMA * (normal / grip_force).max(0.05).sqrt();
    let var_z = PAD_HALF * PAD_HALF / 3.0;
    let kappa = (centroid_shift / var_z).clamp(-300.0, 300.0);
    let (sin, cos) = loads.grasp_xrot.sin_cos();
    let s_top = PEG_TOP_OFFSET - loads.grasp_z;
    let mut w = Vec::with_capacity(n * n);
    for &u in &coords {
        for &v in &coords {
            let s = u * sin + v * cos;
            let d2 = if s <= s_top {
                let perp = u * cos - v * sin;
                perp * perp
            } else {
                let (du, dv) = (u - s_top * sin, v - s_top * cos);
                du * du + dv * dv
            };
            w.push((-d2 / (2.0 * sigma * sigma)).exp() * (kappa * v).exp());
        }
    }
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
    }
    w
}

/// One pad's field in gripper coordinates, `[3, n_y, n_z]` in f64.
fn pad_field_world(n: usize, finger: usize, loads: &FingerLoads, grip_force: f64) -> Vec<f64> {
    let normal = loads.normal[finger];
    let mut out = vec![0.0f64; 3 * n * n];
    if !loads.grasped || normal <= 0.0 {
        return out;
    }
    let sign = if finger == 0 { 1.0 } else { -1.0 };
    let shift = (sign * loads.tilt / (2.0 * normal)).clamp(-0.5 * PAD_HALF, 0.5 * PAD_HALF);
    let w = footprint(n, normal, grip_force, shift, loads);
    let coords = taxel_coords(n);

    let (mut cu, mut cv) = (0.0, 0.0);
    for (i, &u) in coords.iter().enumerate() {
        for (j, &v) in coords.iter().enumerate() {
            cu += w[i * n + j] * u;
            cv += w[i * n + j] * v;
        }
    }
    let mut inertia = 0.0;
    for (i, &u) in coords.iter().enumerate() {
        for (j, &v) in coords.iter().enumerate() {
            inertia += w[i * n + j] * ((u - cu).powi(2) + (v - cv).powi(2));
        }
    }
    let swirl = if inertia > 0.0 { 0.5 * loads.twist / inertia } else { 0.0 };

    let plane = n * n;
    for (i, &u) in coords.iter().enumerate() {
        for (j, &v) in coords.iter().enumerate() {
            let k = i * n + j;
            out[k] = loads.shear[0] * w[k] - swirl * (v - cv) * w[k];
            out[plane + k] = loads.shear[1] * w[k] + swirl * (u - cu) * w[k];
            out[2 * plane + k] = normal * w[k];
        }
    }
    out
}

/// Left and right pad fields, each `[3, n, n]` in its own sensor frame.
///
/// Zero-noise output satisfies `left == flip_rows(right)` whenever the two
/// fingers carry the same loads.
pub fn synth_tactile(n: usize, loads: &FingerLoads, grip_force: f64) -> (Vec<f32>, Vec<f32>) {
    let plane = n * n;
    let left_world = pad_field_world(n, 0, loads, grip_force);
    let right_world = pad_field_world(n, 1, loads, grip_force);
    // `+ 0.0` and `0.0 - x` keep zeros positive so mirrored pairs match bitwise.
    let left: Vec<f32> = left_world.iter().map(|&v| v as f32 + 0.0).collect();
    let mut right = vec![0.0f32; 3 * plane];
    for c in 0..3 {
        for i in 0..n {
            for j in 0..n {
                let v = right_world[c * plane + i * n + j] as f32;
                right[c * plane + (n - 1 - i) * n + j] = if c == 0 { 0.0 - v } else { v + 0.0 };
            }
        }
    }
    (left, right)
}
