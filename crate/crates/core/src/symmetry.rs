//! Residual tactile calibration and the bilateral symmetry regularizer.
//!
//! The right pad is mirrored before encoding, and its embedding is pulled
//! towards the left pad's embedding. With a shared encoder, an exactly
//! mirrored pair of fields gives zero loss for any parameter values.

use symfuse_autograd::Tensor;

use crate::encoders::TactileEncoders;
use crate::error::{Error, Result};
pub use crate::sym_config::{CalibrationMode, FlipAxis, SymmetryOptions, SymmetrySpace};

/// Per-taxel reference forces subtracted from live readings.
#[derive(Clone, Debug)]
pub struct CalibrationReference {
    pub left: Tensor,
    pub right: Tensor,
    /// Number of frames averaged; 0 for the zero reference.
    pub frames: usize,
}

impl CalibrationReference {
    /// Reference for symmetric objects.
    pub fn zero(shape: &[usize]) -> Self {
        CalibrationReference { left: Tensor::zeros(shape), right: Tensor::zeros(shape), frames: 0 }
    }

    pub fn apply(&self, left: &Tensor, right: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((residual(left, &self.left)?, residual(right, &self.right)?))
    }
}

/// Something that can hold a grasped object still and report finger fields.
pub trait CalibrationSource {
    fn grasped(&self) -> bool;
    /// Advances one zero-action hold step and returns `(left, right)` fields.
    fn hold_frame(&mut self) -> Result<(Tensor, Tensor)>;
}

/// Per-taxel mean over `hold_steps` frames of both fingers.
pub fn calibrate(source: &mut dyn CalibrationSource, hold_steps: usize) -> Result<CalibrationReference> {
    if !source.grasped() {
        return Err(Error::Calibration("object is not grasped".into()));
    }
    if hold_steps == 0 {
        return Err(Error::Calibration("hold_steps must be at least 1".into()));
    }
    let mut sums: Option<(Vec<f64>, Vec<f64>, Vec<usize>)> = None;
    for _ in 0..hold_steps {
        let (l, r) = source.hold_frame()?;
        if l.shape() != r.shape() {
            return Err(Error::Calibration(format!("finger shapes differ: {:?} vs {:?}", l.shape(), r.shape())));
        }
        let (sl, sr, shape) = sums.get_or_insert_with(|| (vec![0.0; l.numel()], vec![0.0; l.numel()], l.shape().to_vec()));
        if l.shape() != shape.as_slice() {
            return Err(Error::Calibration("frame shape changed during hold".into()));
        }
        sl.iter_mut().zip(l.data()).for_each(|(s, v)| *s += *v as f64);
        sr.iter_mut().zip(r.data()).for_each(|(s, v)| *s += *v as f64);
    }
    let (sl, sr, shape) = sums.expect("hold_steps >= 1");
    let n = hold_steps as f64;
    let mean = |s: Vec<f64>| Tensor::new(s.into_iter().map(|v| (v / n) as f32).collect(), &shape);
    Ok(CalibrationReference { left: mean(sl)?, right: mean(sr)?, frames: hold_steps })
}

/// `raw − reference`, elementwise.
pub fn residual(raw: &Tensor, reference: &Tensor) -> Result<Tensor> {
    if raw.shape() != reference.shape() {
        return Err(Error::Tensor(symfuse_autograd::TensorError::ShapeMismatch {
            op: "residual",
            lhs: raw.shape().to_vec(),
            rhs: reference.shape().to_vec(),
        }));
    }
    Ok(raw.sub(reference)?)
}

pub fn mirror(field: &Tensor, axis: FlipAxis) -> Result<Tensor> {
    if field.rank() < 2 {
        return Err(Error::Tensor(symfuse_autograd::TensorError::InvalidShape {
            op: "mirror",
            msg: "need rank >= 2".into(),
            shape: field.shape().to_vec(),
        }));
    }
    Ok(match axis {
        FlipAxis::Rows => field.flip(-2)?,
        FlipAxis::Cols => field.flip(-1)?,
    })
}

/// Batch mean of `‖a − b‖²` for `[B,E]` codes.
pub fn embedding_gap(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::Tensor(symfuse_autograd::TensorError::ShapeMismatch {
            op: "embedding_gap",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }));
    }
    Ok(a.sub(b)?.square().sum_axis(1, false)?.mean())
}

/// `h_L = enc(left)`, `h̃_R = enc(mirror(right))`, loss = batch mean of
/// `‖h_L − h̃_R‖²`. Fields are `[B,3,H,W]` residuals.
pub fn symmetry_loss(left: &Tensor, right: &Tensor, encoders: &TactileEncoders, axis: FlipAxis) -> Result<Tensor> {
    let h_l = encoders.left().forward(left)?;
    let h_r = encoders.right().forward(&mirror(right, axis)?)?;
    embedding_gap(&h_l, &h_r)
}

/// Same as [`symmetry_loss`] but compares the two tokens after `cmt`'s
/// tactile self-attention.
pub fn attended_symmetry_loss(
    left: &Tensor,
    right: &Tensor,
    encoders: &TactileEncoders,
    cmt: &crate::fusion::CmtFusion,
    axis: FlipAxis,
) -> Result<Tensor> {
    let h_l = encoders.left().forward(left)?;
    let h_r = encoders.right().forward(&mirror(right, axis)?)?;
    let tokens = cmt.self_attend(&h_l, &h_r)?;
    let b = tokens.shape()[0];
    let e = tokens.shape()[2];
    let a = tokens.narrow(1, 0, 1)?.reshape(&[b, e])?;
    let c = tokens.narrow(1, 1, 1)?.reshape(&[b, e])?;
    embedding_gap(&a, &c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetryLossReport {
    pub loss: f32,
    /// Batch mean of `‖h_L − h̃_R‖`.
    pub mean_gap: f32,
    pub lambda_sym: f32,
}

impl SymmetryLossReport {
    pub fn from_codes(h_l: &Tensor, h_r_mirrored: &Tensor, lambda_sym: f32) -> Result<Self> {
        let loss = embedding_gap(h_l, h_r_mirrored)?.item();
        let e = h_l.shape()[1];
        let gaps: f64 = h_l
            .data()
            .chunks_exact(e)
            .zip(h_r_mirrored.data().chunks_exact(e))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt())
            .sum();
        Ok(SymmetryLossReport { loss, mean_gap: (gaps / h_l.shape()[0] as f64) as f32, lambda_sym })
    }
}

pub fn check_lambda(lambda_sym: f32) -> Result<()> {
    if lambda_sym < 0.0 || !lambda_sym.is_finite() {
        return Err(Error::config("lambda_sym", format!("must be finite and >= 0, got {lambda_sym}")));
    }
    Ok(())
}

/// `L_PPO + λ·L_sym`. At `λ = 0` the PPO loss is returned untouched, so the
/// tape and every gradient are exactly those of the unregularized objective.
pub fn combine_losses(l_ppo: &Tensor, l_sym: &Tensor, lambda_sym: f32) -> Result<Tensor> {
    check_lambda(lambda_sym)?;
    if lambda_sym == 0.0 {
        return Ok(l_ppo.clone());
    }
    Ok(l_ppo.add(&l_sym.mul_scalar(lambda_sym))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Frames {
        frames: Vec<(Vec<f32>, Vec<f32>)>,
        next: usize,
        grasped: bool,
    }

    impl CalibrationSource for Frames {
        fn grasped(&self) -> bool {
            self.grasped
        }

        fn hold_frame(&mut self) -> Result<(Tensor, Tensor)> {
            let (l, r) = self.frames[self.next % self.frames.len()].clone();
            self.next += 1;
            Ok((Tensor::new(l, &[1, 2])?, Tensor::new(r, &[1, 2])?))
        }
    }

    #[test]
    fn calibration_of_constant_frames() {
        let mut src = Frames { frames: vec![(vec![1.0, 2.0], vec![3.0, 4.0])], next: 0, grasped: true };
        let r = calibrate(&mut src, 10).unwrap();
        assert_eq!(r.left.data(), &[1.0, 2.0]);
        assert_eq!(r.right.data(), &[3.0, 4.0]);
        assert_eq!(r.frames, 10);
    }

    #[test]
    fn calibration_of_alternating_frames() {
        let mut src = Frames {
            frames: vec![(vec![1.0, 0.0], vec![0.0, 0.0]), (vec![3.0, 2.0], vec![4.0, -2.0])],
            next: 0,
            grasped: true,
        };
        let r = calibrate(&mut src, 2).unwrap();
        assert_eq!(r.left.data(), &[2.0, 1.0]);
        assert_eq!(r.right.data(), &[2.0, -1.0]);
    }

    #[test]
    fn calibration_requires_grasp() {
        let mut src = Frames { frames: vec![(vec![0.0; 2], vec![0.0; 2])], next: 0, grasped: false };
        assert!(matches!(calibrate(&mut src, 3), Err(Error::Calibration(_))));
    }

    #[test]
    fn residual_cases() {
        let x = Tensor::new(vec![1.0, -2.0, 3.5], &[3]).unwrap();
        assert_eq!(residual(&x, &x).unwrap().data(), &[0.0; 3]);
        assert_eq!(residual(&x, &Tensor::zeros(&[3])).unwrap().data(), x.data());
        let r = Tensor::new(vec![0.5, 0.5, 0.5], &[3]).unwrap();
        let once = residual(&x, &r).unwrap();
        assert_eq!(residual(&once, &Tensor::zeros(&[3])).unwrap().data(), once.data());
        assert!(residual(&x, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn combine_cases() {
        let p = Tensor::scalar(1.5);
        let s = Tensor::scalar(0.25);
        assert_eq!(combine_losses(&p, &s, 0.0).unwrap().item(), 1.5);
        assert_eq!(combine_losses(&p, &s, 1.0).unwrap().item(), 1.75);
        assert_eq!(combine_losses(&p, &Tensor::scalar(0.0), 3.0).unwrap().item(), 1.5);
        assert!(matches!(combine_losses(&p, &s, -0.1), Err(Error::Config { .. })));
    }
}
