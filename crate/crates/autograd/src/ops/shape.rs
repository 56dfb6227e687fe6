use crate::error::{Result, TensorError};
use crate::kernels::strides;
use crate::ops::reduce::{resolve_axis, split_axis};
use crate::tensor::Tensor;

fn permute_data(data: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..data.len() {
        out.push(data[flat]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            flat -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

fn flip_data(data: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let (outer, n, inner) = split_axis(shape, axis);
    let mut out = vec![0.0f32; data.len()];
    for o in 0..outer {
        for j in 0..n {
            let src = (o * n + j) * inner;
            let dst = (o * n + (n - 1 - j)) * inner;
            out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
        }
    }
    out
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::mismatch("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            |ctx| vec![Some(ctx.grad.to_vec())],
        ))
    }

    /// Reorders dimensions: output dim `i` is input dim `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::shape("permute", format!("invalid permutation {perm:?}"), self.shape()));
        }
        let (data, out_shape) = permute_data(self.data(), self.shape(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let grad_shape = out_shape.clone();
        Ok(Tensor::from_op(data, out_shape, "permute", vec![self.clone()], move |ctx| {
            vec![Some(permute_data(ctx.grad, &grad_shape, &inverse).0)]
        }))
    }

    /// Swaps the last two dimensions.
    pub fn t(&self) -> Result<Tensor> {
        let rank = self.rank();
        if rank < 2 {
            return Err(TensorError::shape("t", "need rank >= 2", self.shape()));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    /// Reverses the order of elements along `axis`.
    pub fn flip(&self, axis: isize) -> Result<Tensor> {
        let ax = resolve_axis("flip", self.shape(), axis)?;
        let shape = self.shape().to_vec();
        let data = flip_data(self.data(), &shape, ax);
        Ok(Tensor::from_op(data, shape.clone(), "flip", vec![self.clone()], move |ctx| {
            vec![Some(flip_data(ctx.grad, &shape, ax))]
        }))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: isize, start: usize, len: usize) -> Result<Tensor> {
        let ax = resolve_axis("narrow", self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), ax);
        if start + len > n {
            return Err(TensorError::shape(
                "narrow",
                format!("range {start}..{} exceeds extent {n}", start + len),
                self.shape(),
            ));
        }
        let x = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[ax] = len;
        Ok(Tensor::from_op(data, shape, "narrow", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0f32; outer * n * inner];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                g[base..base + len * inner]
                    .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Tensor], axis: isize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument { op: "concat", msg: "no inputs".into() })?;
        let ax = resolve_axis("concat", first.shape(), axis)?;
        for p in &parts[1..] {
            let ok = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == ax || a == b);
            if !ok {
                return Err(TensorError::mismatch("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), ax);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[ax]).collect();
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                data.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[ax] = total;
        Ok(Tensor::from_op(data, shape, "concat", parts.to_vec(), move |ctx| {
            let mut grads: Vec<Vec<f32>> =
                extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (g, &e) in grads.iter_mut().zip(&extents) {
                    g.extend_from_slice(&ctx.grad[offset..offset + e * inner]);
                    offset += e * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flip_column() {
        let x = Tensor::new(vec![1.0, 2.0], &[2, 1]).unwrap();
        assert_eq!(x.flip(-2).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn flip_gradient_is_ones_for_sum() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]).unwrap();
        x.flip(0).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::new(vec![5.0, 6.0], &[2, 1]).unwrap();
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().data(), a.data());
        assert_eq!(c.narrow(1, 2, 1).unwrap().data(), b.data());
        assert!(c.narrow(1, 2, 2).is_err());
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[3, 1]);
        assert!(Tensor::concat(&[a, b], 1).is_err());
    }

    #[test]
    fn permute_transposes() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let y = x.t().unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    proptest! {
        #[test]
        fn flip_is_involution(h in 1usize..6, w in 1usize..6, c in 1usize..3, seed in 0u32..1000) {
            let n = c * h * w;
            let data: Vec<f32> = (0..n).map(|i| (((i as u32).wrapping_mul(2654435761u32) ^ seed) % 1000) as f32).collect();
            let x = Tensor::new(data, &[c, h, w]).unwrap();
            let back = x.flip(-2).unwrap().flip(-2).unwrap();
            prop_assert_eq!(back.data(), x.data());
        }

        #[test]
        fn permute_roundtrip(a in 1usize..4, b in 1usize..4, c in 1usize..4) {
            let n = a * b * c;
            let x = Tensor::new((0..n).map(|i| i as f32).collect(), &[a, b, c]).unwrap();
            let y = x.permute(&[2, 0, 1]).unwrap().permute(&[1, 2, 0]).unwrap();
            prop_assert_eq!(y.data(), x.data());
            prop_assert_eq!(y.shape(), x.shape());
        }
    }
}
