use crate::error::{Result, TensorError};
use crate::kernels::{broadcast_shape, Broadcast};
use crate::tensor::Tensor;

fn stable_sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn unary<F, D>(&self, op: &'static str, f: F, df: D) -> Tensor
    where
        F: Fn(f32) -> f32,
        D: Fn(f32, f32) -> f32 + Send + Sync + 'static,
    {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(data, self.shape().to_vec(), op, vec![self.clone()], move |ctx| {
            let x = ctx.parents[0].data();
            let g = x
                .iter()
                .zip(ctx.output)
                .zip(ctx.grad)
                .map(|((&x, &y), &g)| g * df(x, y))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn neg(&self) -> Tensor {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f32::exp, |_, y| y)
    }

    /// Natural logarithm.
    pub fn ln(&self) -> Tensor {
        self.unary("ln", f32::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f32::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", f32::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", stable_sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// ELU with alpha = 1.
    pub fn elu(&self) -> Tensor {
        self.unary(
            "elu",
            |x| if x > 0.0 { x } else { x.exp_m1() },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    /// Clamps into `[lo, hi]`. The adjoint passes through strictly inside the
    /// bounds and is zero at or beyond them.
    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn add_scalar(&self, c: f32) -> Tensor {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f32) -> Tensor {
        self.unary("mul_scalar", move |x| x * c, move |_, _| c)
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f32, f32) -> f32,
        df: fn(f32, f32) -> (f32, f32),
    ) -> Result<Tensor> {
        let shape = broadcast_shape(self.shape(), other.shape())
            .ok_or_else(|| TensorError::mismatch(op, self.shape(), other.shape()))?;
        let pa = Broadcast::plan(&shape, self.shape());
        let pb = Broadcast::plan(&shape, other.shape());
        let (a, b) = (self.data(), other.data());
        let n: usize = shape.iter().product();
        let data = match (&pa, &pb) {
            (Broadcast::Same, Broadcast::Same) => {
                a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
            }
            _ => (0..n).map(|i| f(a[pa.index(i)], b[pb.index(i)])).collect(),
        };
        let parents = vec![self.clone(), other.clone()];
        Ok(Tensor::from_op(data, shape, op, parents, move |ctx| {
            let (a, b) = (ctx.parents[0].data(), ctx.parents[1].data());
            let want_a = ctx.parents[0].is_requires_grad();
            let want_b = ctx.parents[1].is_requires_grad();
            let mut ga = if want_a { vec![0.0; n] } else { Vec::new() };
            let mut gb = if want_b { vec![0.0; n] } else { Vec::new() };
            for i in 0..n {
                let (da, db) = df(a[pa.index(i)], b[pb.index(i)]);
                if want_a {
                    ga[i] = ctx.grad[i] * da;
                }
                if want_b {
                    gb[i] = ctx.grad[i] * db;
                }
            }
            vec![
                want_a.then(|| pa.reduce(ga, a.len())),
                want_b.then(|| pb.reduce(gb, b.len())),
            ]
        }))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }

    /// Elementwise minimum; ties route the adjoint to `self`.
    pub fn minimum(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(
            other,
            "minimum",
            |a, b| if a <= b { a } else { b },
            |a, b| if a <= b { (1.0, 0.0) } else { (0.0, 1.0) },
        )
    }

    /// Elementwise maximum; ties route the adjoint to `self`.
    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(
            other,
            "maximum",
            |a, b| if a >= b { a } else { b },
            |a, b| if a >= b { (1.0, 0.0) } else { (0.0, 1.0) },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        let x = Tensor::new(vec![0.0, -1.0, 2.0], &[3]).unwrap();
        assert_eq!(x.elu().data()[0], 0.0);
        assert_eq!(x.relu().data()[1], 0.0);
        assert_eq!(x.sigmoid().data()[0], 0.5);
        assert_eq!(x.tanh().data()[0], 0.0);
    }

    #[test]
    fn broadcast_bias_grad_sums_rows() {
        let x = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        let b = Tensor::param(vec![0.0; 3], &[3]).unwrap();
        x.add(&b).unwrap().sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn column_broadcast_grad() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let m = Tensor::param(vec![10.0, 20.0], &[2, 1]).unwrap();
        let y = x.mul(&m).unwrap();
        assert_eq!(y.data(), &[10.0, 20.0, 60.0, 80.0]);
        y.sum().backward().unwrap();
        assert_eq!(m.grad().unwrap(), vec![3.0, 7.0]);
        assert_eq!(x.grad().unwrap(), vec![10.0, 10.0, 20.0, 20.0]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(a.add(&b), Err(TensorError::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn clamp_gradient_is_zero_outside() {
        let x = Tensor::param(vec![-5.0, 0.5, 5.0], &[3]).unwrap();
        x.clamp(-1.0, 1.0).sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn shared_input_sums_adjoints() {
        // y = x*x through one node vs two distinct leaves with equal values.
        let x = Tensor::param(vec![3.0], &[1]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        let a = Tensor::param(vec![3.0], &[1]).unwrap();
        let b = Tensor::param(vec![3.0], &[1]).unwrap();
        a.mul(&b).unwrap().sum().backward().unwrap();
        let dup = a.grad().unwrap()[0] + b.grad().unwrap()[0];
        assert_eq!(x.grad().unwrap()[0], dup);
    }
}
