//! Central finite-difference oracle for analytic gradients.
//!
//! The numeric side never touches the tape: every probe is a fresh forward
//! evaluation under [`no_grad`](crate::no_grad) with one coordinate nudged by
//! `±eps`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

pub mod targets;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f32,
    /// Pass threshold on the relative error.
    pub rel_tol: f64,
    /// Denominator floor: gradients smaller than this are compared absolutely.
    /// With `eps = 1e-3` in f32, central differences carry rounding noise of
    /// a few 1e-4 at unit input scale, so the floor sits at 1.
    pub abs_floor: f64,
    /// Coordinates probed per input; larger inputs are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            rel_tol: 1e-3,
            abs_floor: 1.0,
            max_coords: 24,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<Probe>,
    pub probes: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err <= tol && self.max_rel_err.is_finite()
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.probes += other.probes;
        if other.max_rel_err > self.max_rel_err || other.max_rel_err.is_nan() {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences for every input.
pub fn check<F>(inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().requires_grad()).collect();
    let loss = f(&leaves)?;
    loss.backward()?;

    let constants: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();

    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let n = leaf.numel();
        let coords: Vec<usize> = if n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut picked = index::sample(&mut rng, n, cfg.max_coords).into_vec();
            picked.sort_unstable();
            picked
        };
        for idx in coords {
            let base = constants[i].data()[idx];
            let (hi, lo) = (base + cfg.eps, base - cfg.eps);
            let eval = |value: f32| -> Result<f64> {
                let mut data = constants[i].to_vec();
                data[idx] = value;
                let mut probe_inputs = constants.clone();
                probe_inputs[i] = Tensor::new(data, constants[i].shape())?;
                Ok(no_grad(|| f(&probe_inputs))?.item() as f64)
            };
            // Divide by the step that f32 actually realized, not the nominal 2·eps.
            let numeric = (eval(hi)? - eval(lo)?) / (hi as f64 - lo as f64);
            let a = analytic[idx] as f64;
            let rel_err = relative_error(a, numeric, cfg.abs_floor);
            report.probes += 1;
            if rel_err > report.max_rel_err || rel_err.is_nan() {
                report.max_rel_err = rel_err;
                report.worst = Some(Probe { input: i, index: idx, analytic: a, numeric, rel_err });
            }
        }
    }
    Ok(report)
}
