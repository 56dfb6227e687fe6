use crate::error::{Result, TensorError};
use crate::kernels::{gemm, Layout};
use crate::tensor::Tensor;

impl Tensor {
    /// Matrix product over the last two dimensions.
    ///
    /// Supported forms: `[M,K]·[K,N]`, `[B,M,K]·[B,K,N]`, and `[B,M,K]·[K,N]`
    /// (the right operand shared across the batch).
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let err = || TensorError::mismatch("matmul", self.shape(), other.shape());
        let (batch, m, k) = match *self.shape() {
            [m, k] => (1, m, k),
            [b, m, k] => (b, m, k),
            _ => return Err(err()),
        };
        let (b_batch, k2, n) = match *other.shape() {
            [k, n] => (0, k, n),
            [b, k, n] => (b, k, n),
            _ => return Err(err()),
        };
        if k != k2 || (b_batch != 0 && (b_batch != batch || self.rank() != 3)) {
            return Err(err());
        }
        let shared_rhs = b_batch == 0;
        let mut out = vec![0.0f32; batch * m * n];
        for bi in 0..batch {
            let a = &self.data()[bi * m * k..(bi + 1) * m * k];
            let b = if shared_rhs {
                other.data()
            } else {
                &other.data()[bi * k * n..(bi + 1) * k * n]
            };
            gemm(m, k, n, a, Layout::row_major(k), b, Layout::row_major(n), 0.0, &mut out[bi * m * n..(bi + 1) * m * n]);
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let parents = vec![self.clone(), other.clone()];
        Ok(Tensor::from_op(out, shape, "matmul", parents, move |ctx| {
            let (a_all, b_all) = (ctx.parents[0].data(), ctx.parents[1].data());
            let mut ga = ctx.parents[0].is_requires_grad().then(|| vec![0.0f32; batch * m * k]);
            let mut gb = ctx.parents[1].is_requires_grad().then(|| vec![0.0f32; b_all.len()]);
            for bi in 0..batch {
                let g = &ctx.grad[bi * m * n..(bi + 1) * m * n];
                let a = &a_all[bi * m * k..(bi + 1) * m * k];
                let (b, b_off) = if shared_rhs {
                    (b_all, 0)
                } else {
                    (&b_all[bi * k * n..(bi + 1) * k * n], bi * k * n)
                };
                if let Some(ga) = ga.as_mut() {
                    // dA = G · Bᵀ
                    gemm(m, n, k, g, Layout::row_major(n), b, Layout::transposed(n), 0.0, &mut ga[bi * m * k..(bi + 1) * m * k]);
                }
                if let Some(gb) = gb.as_mut() {
                    // dB (+)= Aᵀ · G
                    let beta = if shared_rhs && bi > 0 { 1.0 } else { 0.0 };
                    gemm(k, m, n, a, Layout::transposed(k), g, Layout::row_major(n), beta, &mut gb[b_off..b_off + k * n]);
                }
            }
            vec![ga, gb]
        }))
    }

    /// Affine map `x · Wᵀ + b` over the last dimension of `x`.
    ///
    /// `weight` is `[out, in]`; `bias`, when given, is `[out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let err = |rhs: &[usize]| TensorError::mismatch("linear", self.shape(), rhs);
        let in_dim = *self.shape().last().ok_or_else(|| err(weight.shape()))?;
        let [out_dim, w_in] = *weight.shape() else {
            return Err(err(weight.shape()));
        };
        if w_in != in_dim {
            return Err(err(weight.shape()));
        }
        if let Some(b) = bias {
            if b.shape() != [out_dim] {
                return Err(err(b.shape()));
            }
        }
        let rows = self.numel() / in_dim.max(1);
        let mut out = vec![0.0f32; rows * out_dim];
        if let Some(b) = bias {
            for r in 0..rows {
                out[r * out_dim..(r + 1) * out_dim].copy_from_slice(b.data());
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(rows, in_dim, out_dim, self.data(), Layout::row_major(in_dim), weight.data(), Layout::transposed(in_dim), beta, &mut out);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = out_dim;
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(out, shape, "linear", parents, move |ctx| {
            let (x, w) = (ctx.parents[0].data(), ctx.parents[1].data());
            let g = ctx.grad;
            let gx = ctx.parents[0].is_requires_grad().then(|| {
                let mut gx = vec![0.0f32; rows * in_dim];
                gemm(rows, out_dim, in_dim, g, Layout::row_major(out_dim), w, Layout::row_major(in_dim), 0.0, &mut gx);
                gx
            });
            let gw = ctx.parents[1].is_requires_grad().then(|| {
                let mut gw = vec![0.0f32; out_dim * in_dim];
                gemm(out_dim, rows, in_dim, g, Layout::transposed(out_dim), x, Layout::row_major(in_dim), 0.0, &mut gw);
                gw
            });
            let mut grads = vec![gx, gw];
            if ctx.parents.len() == 3 {
                grads.push(ctx.parents[2].is_requires_grad().then(|| {
                    let mut gb = vec![0.0f32; out_dim];
                    for row in g.chunks_exact(out_dim) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                }));
            }
            grads
        }))
    }
}
