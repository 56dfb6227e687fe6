//! Finite-difference targets covering every differentiable primitive.
//!
//! Each target draws a small random instance from its seed and reduces the op
//! output to a scalar through a fixed random projection, so that every output
//! element contributes a distinct weight to the checked gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check, GradCheckConfig, GradCheckReport};
use crate::error::Result;
use crate::functional::{self, LstmParams};
use crate::tensor::Tensor;

/// A named gradient check that can be instantiated from a seed.
#[derive(Clone, Copy)]
pub struct GradTarget {
    pub name: &'static str,
    pub run: fn(u64, &GradCheckConfig) -> Result<GradCheckReport>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(data, shape).expect("shape matches")
}

/// Uniform samples kept at least `gap` away from every point in `kinks`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], kinks: &[f32], gap: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f32 = rng.random_range(-1.5..1.5);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(data, shape).expect("shape matches")
}

/// Scalar `Σ w ⊙ y` with `w` fixed by the caller.
pub fn project(y: &Tensor, w: &Tensor) -> Result<Tensor> {
    Ok(y.mul(w)?.sum())
}

fn unary_target(seed: u64, cfg: &GradCheckConfig, lo: f32, hi: f32, op: fn(&Tensor) -> Tensor) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[3, 4], lo, hi);
    let w = uniform(&mut r, &[3, 4], -1.0, 1.0);
    check(&[x], |t| project(&op(&t[0]), &w), cfg)
}

fn kinked_target(seed: u64, cfg: &GradCheckConfig, kinks: &[f32], op: fn(&Tensor) -> Tensor) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = away_from(&mut r, &[3, 4], kinks, 20.0 * cfg.eps);
    let w = uniform(&mut r, &[3, 4], -1.0, 1.0);
    check(&[x], |t| project(&op(&t[0]), &w), cfg)
}

fn binary_target(
    seed: u64,
    cfg: &GradCheckConfig,
    rhs_shape: &[usize],
    rhs_range: (f32, f32),
    op: fn(&Tensor, &Tensor) -> Result<Tensor>,
) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    let b = uniform(&mut r, rhs_shape, rhs_range.0, rhs_range.1);
    let w = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    check(&[a, b], |t| project(&op(&t[0], &t[1])?, &w), cfg)
}

fn minimum_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[12], -1.0, 1.0);
    // Keep the operands apart so no probe crosses the switching surface.
    let offsets: Vec<f32> = (0..12)
        .map(|_| {
            let m: f32 = r.random_range(0.1..0.8);
            if r.random_bool(0.5) { m } else { -m }
        })
        .collect();
    let b = Tensor::new(a.data().iter().zip(&offsets).map(|(x, o)| x + o).collect(), &[12])?;
    let w = uniform(&mut r, &[12], -1.0, 1.0);
    check(&[a, b], |t| project(&t[0].minimum(&t[1])?, &w), cfg)
}

fn reduce_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    let w1 = uniform(&mut r, &[2, 4], -1.0, 1.0);
    let w2 = uniform(&mut r, &[2, 3, 1], -1.0, 1.0);
    check(
        &[x],
        |t| {
            let a = project(&t[0].sum_axis(1, false)?, &w1)?;
            let b = project(&t[0].mean_axis(-1, true)?, &w2)?;
            let c = t[0].square().mean().mul_scalar(0.5);
            a.add(&b)?.add(&c)?.add(&t[0].sum().mul_scalar(0.1))
        },
        cfg,
    )
}

fn softmax_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[5], -2.0, 2.0);
    let x2 = uniform(&mut r, &[2, 3, 4], -2.0, 2.0);
    let w = uniform(&mut r, &[5], -1.0, 1.0);
    let w2 = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    check(
        &[x, x2],
        |t| project(&t[0].softmax(0)?, &w)?.add(&project(&t[1].softmax(1)?, &w2)?),
        cfg,
    )
}

fn shape_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    let b = uniform(&mut r, &[2, 2, 4], -1.0, 1.0);
    let w = uniform(&mut r, &[4, 2, 4], -1.0, 1.0);
    check(
        &[a, b],
        |t| {
            let cat = Tensor::concat(&[t[0].clone(), t[1].clone()], 1)?; // [2,5,4]
            let piece = cat.narrow(1, 1, 4)?; // [2,4,4]
            let moved = piece.permute(&[1, 0, 2])?.flip(-2)?; // [4,2,4]
            project(&moved.reshape(&[4, 2, 4])?, &w)
        },
        cfg,
    )
}

fn matmul_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[2, 3, 4], -1.0, 1.0);
    let b = uniform(&mut r, &[2, 4, 5], -1.0, 1.0);
    let c = uniform(&mut r, &[4, 5], -1.0, 1.0);
    let w = uniform(&mut r, &[2, 3, 5], -1.0, 1.0);
    check(
        &[a, b, c],
        |t| {
            let batched = t[0].matmul(&t[1])?;
            let shared = t[0].matmul(&t[2])?;
            project(&batched.add(&shared)?, &w)
        },
        cfg,
    )
}

fn linear_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[3, 5], -1.0, 1.0);
    let wt = uniform(&mut r, &[4, 5], -1.0, 1.0);
    let b = uniform(&mut r, &[4], -1.0, 1.0);
    let w = uniform(&mut r, &[3, 4], -1.0, 1.0);
    check(&[x, wt, b], |t| project(&functional::linear(&t[0], &t[1], &t[2])?, &w), cfg)
}

fn conv2d_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let stride = 1 + (seed % 2) as usize;
    let x = uniform(&mut r, &[2, 2, 7, 6], -1.0, 1.0);
    let k = uniform(&mut r, &[3, 2, 3, 2], -0.5, 0.5);
    let b = uniform(&mut r, &[3], -0.5, 0.5);
    let probe = x.conv2d(&k, &b, stride)?;
    let w = uniform(&mut r, probe.shape(), -1.0, 1.0);
    check(&[x, k, b], |t| project(&t[0].conv2d(&t[1], &t[2], stride)?, &w), cfg)
}

fn soft_argmax_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[2, 3, 4, 5], -2.0, 2.0);
    let w = uniform(&mut r, &[2, 6], -1.0, 1.0);
    check(&[x], |t| project(&functional::spatial_soft_argmax(&t[0], 1.0)?, &w), cfg)
}

fn lstm_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (batch, input, hidden, steps) = (2, 3, 4, 3);
    let xs = uniform(&mut r, &[steps, batch, input], -1.0, 1.0);
    let weight = uniform(&mut r, &[4 * hidden, input + hidden], -0.6, 0.6);
    let bias = uniform(&mut r, &[4 * hidden], -0.3, 0.3);
    let h0 = uniform(&mut r, &[batch, hidden], -0.5, 0.5);
    let c0 = uniform(&mut r, &[batch, hidden], -0.5, 0.5);
    let w = uniform(&mut r, &[batch, hidden], -1.0, 1.0);
    check(
        &[xs, weight, bias, h0, c0],
        |t| {
            let params = LstmParams { weight: t[1].clone(), bias: t[2].clone() };
            let (mut h, mut c) = (t[3].clone(), t[4].clone());
            for s in 0..steps {
                let x = t[0].narrow(0, s, 1)?.reshape(&[batch, input])?;
                (h, c) = functional::lstm_step(&x, &h, &c, &params)?;
            }
            project(&h, &w)?.add(&project(&c, &w)?.mul_scalar(0.5))
        },
        cfg,
    )
}

fn mse_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let a = uniform(&mut r, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut r, &[3, 4], -1.0, 1.0);
    check(&[a, b], |t| functional::mse(&t[0], &t[1]), cfg)
}

fn layer_norm_target(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let x = uniform(&mut r, &[3, 6], -1.0, 1.0);
    let g = uniform(&mut r, &[6], 0.5, 1.5);
    let b = uniform(&mut r, &[6], -0.5, 0.5);
    let w = uniform(&mut r, &[3, 6], -1.0, 1.0);
    check(&[x, g, b], |t| project(&functional::layer_norm(&t[0], &t[1], &t[2], 1e-5)?, &w), cfg)
}

/// Every differentiable primitive of the tensor core.
pub fn op_targets() -> Vec<GradTarget> {
    macro_rules! t {
        ($name:expr, $f:expr) => {
            GradTarget { name: $name, run: $f }
        };
    }
    vec![
        t!("add", |s, c| binary_target(s, c, &[4], (-1.0, 1.0), |a, b| a.add(b))),
        t!("sub", |s, c| binary_target(s, c, &[3, 1], (-1.0, 1.0), |a, b| a.sub(b))),
        t!("mul", |s, c| binary_target(s, c, &[2, 3, 4], (-1.0, 1.0), |a, b| a.mul(b))),
        t!("div", |s, c| binary_target(s, c, &[2, 3, 4], (0.5, 2.0), |a, b| a.div(b))),
        t!("minimum", minimum_target),
        t!("neg", |s, c| unary_target(s, c, -1.0, 1.0, |x| x.neg())),
        t!("exp", |s, c| unary_target(s, c, -1.0, 1.0, |x| x.exp())),
        t!("ln", |s, c| unary_target(s, c, 0.5, 2.0, |x| x.ln())),
        t!("sqrt", |s, c| unary_target(s, c, 0.5, 2.0, |x| x.sqrt())),
        t!("square", |s, c| unary_target(s, c, -1.0, 1.0, |x| x.square())),
        t!("tanh", |s, c| unary_target(s, c, -2.0, 2.0, |x| x.tanh())),
        t!("sigmoid", |s, c| unary_target(s, c, -3.0, 3.0, |x| x.sigmoid())),
        t!("relu", |s, c| kinked_target(s, c, &[0.0], |x| x.relu())),
        t!("elu", |s, c| unary_target(s, c, -2.0, 2.0, |x| x.elu())),
        t!("clamp", |s, c| kinked_target(s, c, &[-0.7, 0.6], |x| x.clamp(-0.7, 0.6))),
        t!("add_scalar", |s, c| unary_target(s, c, -1.0, 1.0, |x| x.add_scalar(0.3))),
        t!("mul_scalar", |s, c| unary_target(s, c, -1.0, 1.0, |x| x.mul_scalar(-1.7))),
        t!("reductions", reduce_target),
        t!("softmax", softmax_target),
        t!("shape_ops", shape_target),
        t!("matmul", matmul_target),
        t!("linear", linear_target),
        t!("conv2d", conv2d_target),
        t!("spatial_soft_argmax", soft_argmax_target),
        t!("lstm_bptt", lstm_target),
        t!("mse", mse_target),
        t!("layer_norm", layer_norm_target),
    ]
}
