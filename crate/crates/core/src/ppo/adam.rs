use symfuse_autograd::Tensor;

use crate::error::{Error, Result};
use crate::nn::Module;

/// Global L2 norm of all gradients, accumulated in f64. Missing gradients
/// count as zero.
pub fn grad_norm(module: &dyn Module) -> f64 {
    let mut sq = 0.0f64;
    module.visit("", &mut |_, t| {
        if let Some(g) = t.grad() {
            sq += g.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>();
        }
    });
    sq.sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(module: &dyn Module, max_norm: f64) -> Result<f64> {
    let norm = grad_norm(module);
    if !norm.is_finite() {
        return Err(Error::Numerical { msg: format!("gradient norm is {norm}"), dump: None });
    }
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        let mut failed = None;
        module.visit("", &mut |name, t| {
            if let Some(g) = t.grad() {
                let scaled = g.iter().map(|&x| (x as f64 * scale) as f32).collect();
                if let Err(e) = t.set_grad(scaled) {
                    failed.get_or_insert((name.to_string(), e));
                }
            }
        });
        if let Some((name, e)) = failed {
            return Err(Error::Numerical { msg: format!("rescaling gradient of {name}: {e}"), dump: None });
        }
    }
    Ok(norm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments, in parameter visit order.
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update from the current gradients, replacing each
    /// parameter with a fresh leaf.
    pub fn update<M: Module>(&mut self, module: &mut M) -> Result<()> {
        if self.m.is_empty() {
            module.visit("", &mut |_, t| {
                self.m.push(vec![0.0; t.numel()]);
                self.v.push(vec![0.0; t.numel()]);
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (self.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        let mut idx = 0;
        let mut failure = None;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit_mut("", &mut |name, t| {
            let i = idx;
            idx += 1;
            if failure.is_some() {
                return;
            }
            if i >= ms.len() || ms[i].len() != t.numel() {
                failure = Some(format!("optimizer state does not match parameter {name}"));
                return;
            }
            let Some(g) = t.grad() else { return };
            let (m, v) = (&mut ms[i], &mut vs[i]);
            let mut data = t.to_vec();
            for k in 0..data.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                data[k] -= step_size * m[k] / (v[k].sqrt() / bc2_sqrt + eps);
            }
            match Tensor::param(data, t.shape()) {
                Ok(p) => *t = p,
                Err(e) => failure = Some(e.to_string()),
            }
        });
        if idx != ms.len() && failure.is_none() {
            failure = Some(format!("optimizer holds {} moments for {} parameters", ms.len(), idx));
        }
        match failure {
            Some(msg) => Err(Error::Numerical { msg, dump: None }),
            None => Ok(()),
        }
    }
}
