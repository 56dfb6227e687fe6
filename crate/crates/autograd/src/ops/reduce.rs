use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Splits `shape` around `axis` into (outer, extent, inner) loop counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn resolve_axis(op: &'static str, shape: &[usize], axis: isize) -> Result<usize> {
    let rank = shape.len() as isize;
    let a = if axis < 0 { axis + rank } else { axis };
    if a < 0 || a >= rank {
        return Err(TensorError::shape(op, format!("axis {axis} out of range"), shape));
    }
    Ok(a as usize)
}

impl Tensor {
    /// Sum of all elements as a rank-0 tensor (accumulated in f64).
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().map(|&x| x as f64).sum::<f64>() as f32;
        let n = self.numel();
        Tensor::from_op(vec![s], Vec::new(), "sum", vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0]; n])]
        })
    }

    /// Mean of all elements as a rank-0 tensor.
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s = self.data().iter().map(|&x| x as f64).sum::<f64>() / n.max(1) as f64;
        Tensor::from_op(vec![s as f32], Vec::new(), "mean", vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0] / n as f32; n])]
        })
    }

    fn reduce_axis(&self, op: &'static str, axis: isize, keepdim: bool, scale_by_n: bool) -> Result<Tensor> {
        let ax = resolve_axis(op, self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), ax);
        let x = self.data();
        let scale = if scale_by_n { 1.0 / n as f64 } else { 1.0 };
        let mut out = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0f64;
                for j in 0..n {
                    acc += x[(o * n + j) * inner + i] as f64;
                }
                out[o * inner + i] = (acc * scale) as f32;
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[ax] = 1;
        } else {
            shape.remove(ax);
        }
        let gscale = scale as f32;
        Ok(Tensor::from_op(out, shape, op, vec![self.clone()], move |ctx| {
            let mut g = vec![0.0f32; outer * n * inner];
            for o in 0..outer {
                for j in 0..n {
                    for i in 0..inner {
                        g[(o * n + j) * inner + i] = ctx.grad[o * inner + i] * gscale;
                    }
                }
            }
            vec![Some(g)]
        }))
    }

    /// Sum along `axis` (negative counts from the end).
    pub fn sum_axis(&self, axis: isize, keepdim: bool) -> Result<Tensor> {
        self.reduce_axis("sum_axis", axis, keepdim, false)
    }

    pub fn mean_axis(&self, axis: isize, keepdim: bool) -> Result<Tensor> {
        self.reduce_axis("mean_axis", axis, keepdim, true)
    }

    /// Softmax along `axis`, stabilized by subtracting the running max.
    pub fn softmax(&self, axis: isize) -> Result<Tensor> {
        let ax = resolve_axis("softmax", self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), ax);
        let x = self.data();
        let mut y = vec![0.0f32; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| x[at(j)]).fold(f32::NEG_INFINITY, f32::max);
                let mut total = 0.0f64;
                for j in 0..n {
                    let e = (x[at(j)] - max).exp();
                    y[at(j)] = e;
                    total += e as f64;
                }
                let inv = (1.0 / total) as f32;
                for j in 0..n {
                    y[at(j)] *= inv;
                }
            }
        }
        Ok(Tensor::from_op(y, self.shape().to_vec(), "softmax", vec![self.clone()], move |ctx| {
            let (y, g) = (ctx.output, ctx.grad);
            let mut gx = vec![0.0f32; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let dot: f32 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..n {
                        gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_closed_forms() {
        let x = Tensor::new(vec![2.0, 2.0, 2.0], &[3]).unwrap();
        for v in x.softmax(0).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let x = Tensor::new(vec![0.0, 3f32.ln()], &[2]).unwrap();
        let y = x.softmax(-1).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-6);
        assert!((y.data()[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn softmax_handles_large_inputs() {
        let x = Tensor::new(vec![1000.0, 1000.0], &[2]).unwrap();
        assert_eq!(x.softmax(0).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn axis_reductions() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        assert_eq!(x.sum_axis(0, false).unwrap().data(), &[5.0, 7.0, 9.0]);
        let m = x.mean_axis(-1, true).unwrap();
        assert_eq!(m.shape(), &[2, 1]);
        assert_eq!(m.data(), &[2.0, 5.0]);
        assert!(x.sum_axis(2, false).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::param(vec![0.3, -1.0, 4.0], &[3]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn backward_twice_accumulates() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = x.square().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
    }
}
