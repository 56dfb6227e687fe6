//! Network building blocks composed from the primitive ops.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub use crate::ops::conv_output_size;

/// Affine layer `x · Wᵀ + b`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    input.linear(weight, Some(bias))
}

/// Mean squared error over every element. Shapes must match exactly.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::mismatch("mse", a.shape(), b.shape()));
    }
    Ok(a.sub(b)?.square().mean())
}

/// Reverses the second-to-last (row) axis.
pub fn flip_vertical(x: &Tensor) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(TensorError::shape("flip_vertical", "need rank >= 2", x.shape()));
    }
    x.flip(-2)
}

/// Coordinate grid of `n` points spanning `[-1, 1]`; a single point sits at 0.
pub fn linspace_unit(n: usize) -> Vec<f32> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -1.0 + 2.0 * i as f32 / (n - 1) as f32)
        .collect()
}

/// Per-channel expected image coordinates under a spatial softmax.
///
/// `features` is `[B,C,H,W]`; the result is `[B,2C]` laid out as
/// `(x_0, y_0, x_1, y_1, ...)` with `x` along W and `y` along H, both in
/// `[-1, 1]`.
pub fn spatial_soft_argmax(features: &Tensor, temperature: f32) -> Result<Tensor> {
    let [b, c, h, w] = *features.shape() else {
        return Err(TensorError::shape("spatial_soft_argmax", "expected [B,C,H,W]", features.shape()));
    };
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(TensorError::InvalidArgument {
            op: "spatial_soft_argmax",
            msg: format!("temperature must be positive, got {temperature}"),
        });
    }
    let (xs, ys) = (linspace_unit(w), linspace_unit(h));
    let mut grid = Vec::with_capacity(h * w * 2);
    for y in &ys {
        for x in &xs {
            grid.push(*x);
            grid.push(*y);
        }
    }
    let grid = Tensor::new(grid, &[h * w, 2])?;
    let attn = features
        .reshape(&[b * c, h * w])?
        .mul_scalar(1.0 / temperature)
        .softmax(-1)?;
    attn.matmul(&grid)?.reshape(&[b, 2 * c])
}

/// Parameters of one LSTM layer with gates packed as `[i, f, g, o]`.
#[derive(Clone, Debug)]
pub struct LstmParams {
    /// `[4·hidden, input + hidden]`, acting on `concat(x, h)`.
    pub weight: Tensor,
    /// `[4·hidden]`.
    pub bias: Tensor,
}

impl LstmParams {
    pub fn hidden(&self) -> usize {
        self.bias.numel() / 4
    }

    pub fn input(&self) -> usize {
        self.weight.shape()[1] - self.hidden()
    }
}

/// One step of a standard LSTM cell; returns `(h', c')`.
pub fn lstm_step(x: &Tensor, h: &Tensor, c: &Tensor, params: &LstmParams) -> Result<(Tensor, Tensor)> {
    let hidden = params.hidden();
    let batch = x.shape().first().copied().unwrap_or(0);
    if x.rank() != 2 || x.shape()[1] != params.input() {
        return Err(TensorError::mismatch("lstm_step", x.shape(), params.weight.shape()));
    }
    if h.shape() != [batch, hidden] || c.shape() != [batch, hidden] {
        return Err(TensorError::mismatch("lstm_step", h.shape(), c.shape()));
    }
    let z = Tensor::concat(&[x.clone(), h.clone()], 1)?.linear(&params.weight, Some(&params.bias))?;
    let input_gate = z.narrow(1, 0, hidden)?.sigmoid();
    let forget_gate = z.narrow(1, hidden, hidden)?.sigmoid();
    let candidate = z.narrow(1, 2 * hidden, hidden)?.tanh();
    let output_gate = z.narrow(1, 3 * hidden, hidden)?.sigmoid();
    let c_next = forget_gate.mul(c)?.add(&input_gate.mul(&candidate)?)?;
    let h_next = output_gate.mul(&c_next.tanh())?;
    Ok((h_next, c_next))
}

/// Layer normalization over the last axis with affine `gamma`, `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let mean = x.mean_axis(-1, true)?;
    let centered = x.sub(&mean)?;
    let var = centered.square().mean_axis(-1, true)?;
    let normed = centered.div(&var.add_scalar(eps).sqrt())?;
    normed.mul(gamma)?.add(beta)
}
