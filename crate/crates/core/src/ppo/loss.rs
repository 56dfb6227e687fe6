use symfuse_autograd::Tensor;

use crate::error::{Error, Result};
use crate::ppo::config::PpoConfig;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn check_bounds(sigma_min: f64, sigma_max: f64) -> Result<()> {
    if !(sigma_min > 0.0 && sigma_max >= sigma_min && sigma_max.is_finite()) {
        return Err(Error::config("ppo.sigma_min", format!("need 0 < sigma_min <= sigma_max, got {sigma_min}, {sigma_max}")));
    }
    Ok(())
}

/// Log-std clamped to `[ln σ_min, ln σ_max]`; zero gradient where clamped.
pub fn clamp_log_std(log_std: &Tensor, sigma_min: f64, sigma_max: f64) -> Result<Tensor> {
    check_bounds(sigma_min, sigma_max)?;
    Ok(log_std.clamp(sigma_min.ln() as f32, sigma_max.ln() as f32))
}

/// `σ = exp(clamp(log_std))`, elementwise within `[σ_min, σ_max]`.
pub fn clamp_sigma(log_std: &Tensor, sigma_min: f64, sigma_max: f64) -> Result<Tensor> {
    Ok(clamp_log_std(log_std, sigma_min, sigma_max)?.exp())
}

/// Diagonal Gaussian log-density per row: `[N,D]` inputs, `[N]` output.
pub fn gaussian_log_prob(actions: &Tensor, mean: &Tensor, log_std: &Tensor) -> Result<Tensor> {
    let z = actions.sub(mean)?.div(&log_std.exp())?;
    let d = *mean.shape().last().unwrap_or(&1) as f32;
    let per_dim = z.square().mul_scalar(-0.5).sub(log_std)?;
    Ok(per_dim.sum_axis(-1, false)?.add_scalar(-(HALF_LN_2PI as f32) * d))
}

/// Closed-form density of one action, in f64.
pub fn gaussian_log_prob_scalar(action: &[f32], mean: &[f32], log_std: &[f32]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&a, &m), &s)| {
            let z = (a as f64 - m as f64) / (s as f64).exp();
            -0.5 * z * z - s as f64 - HALF_LN_2PI
        })
        .sum()
}

/// Per-row entropy `Σ (ln σ + ½(1 + ln 2π))`.
pub fn gaussian_entropy(log_std: &Tensor) -> Result<Tensor> {
    let d = *log_std.shape().last().unwrap_or(&1) as f32;
    Ok(log_std.sum_axis(-1, false)?.add_scalar((0.5 + HALF_LN_2PI as f32) * d))
}

/// Mean over rows of the summed squared excursion of `mean` beyond `[-1, 1]`.
pub fn bounds_penalty(mean: &Tensor) -> Result<Tensor> {
    let hi = mean.add_scalar(-1.0).relu().square();
    let lo = mean.neg().add_scalar(-1.0).relu().square();
    Ok(hi.add(&lo)?.sum_axis(-1, false)?.mean())
}

/// Policy head outputs for `N` samples.
#[derive(Clone, Debug)]
pub struct PolicyOutput {
    /// `[N, A]` pre-clamp action means.
    pub mean: Tensor,
    /// `[N, A]`, already clamped.
    pub log_std: Tensor,
    /// `[N]`.
    pub value: Tensor,
}

/// Targets for one minibatch; all constants.
#[derive(Clone, Debug)]
pub struct LossBatch {
    pub actions: Tensor,
    pub old_log_prob: Tensor,
    pub advantages: Tensor,
    pub returns: Tensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub total: f32,
    pub policy: f32,
    pub value: f32,
    pub bounds: f32,
    pub entropy: f32,
    pub clip_fraction: f32,
    pub approx_kl: f32,
}

/// Clipped surrogate, weighted value and bounds terms, and the entropy bonus
/// when its coefficient is nonzero.
pub fn ppo_loss(out: &PolicyOutput, batch: &LossBatch, cfg: &PpoConfig) -> Result<(Tensor, LossStats)> {
    let log_prob = gaussian_log_prob(&batch.actions, &out.mean, &out.log_std)?;
    let log_ratio = log_prob.sub(&batch.old_log_prob)?;
    let ratio = log_ratio.exp();
    let eps = cfg.clip as f32;
    let unclipped = ratio.mul(&batch.advantages)?;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps).mul(&batch.advantages)?;
    let policy = unclipped.minimum(&clipped)?.mean().neg();
    let value = out.value.sub(&batch.returns)?.square().mean();
    let bounds = bounds_penalty(&out.mean)?;

    let mut total = policy.add(&value.mul_scalar(cfg.value_coef as f32))?.add(&bounds.mul_scalar(cfg.bounds_coef as f32))?;
    let entropy = gaussian_entropy(&out.log_std)?.mean();
    if cfg.entropy_coef != 0.0 {
        total = total.sub(&entropy.mul_scalar(cfg.entropy_coef as f32))?;
    }

    let n = ratio.numel().max(1) as f32;
    let clip_fraction = ratio.data().iter().filter(|r| (**r - 1.0).abs() > eps).count() as f32 / n;
    let approx_kl = log_ratio.data().iter().map(|lr| (lr.exp() - 1.0) - lr).sum::<f32>() / n;
    let stats = LossStats {
        total: total.item(),
        policy: policy.item(),
        value: value.item(),
        bounds: bounds.item(),
        entropy: entropy.item(),
        clip_fraction,
        approx_kl,
    };
    let terms = [("total", stats.total), ("policy", stats.policy), ("value", stats.value), ("bounds", stats.bounds), ("entropy", stats.entropy)];
    if let Some((name, v)) = terms.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical { msg: format!("non-finite {name} loss ({v}); terms: {terms:?}"), dump: None });
    }
    Ok((total, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32], shape: &[usize]) -> Tensor {
        Tensor::new(v.to_vec(), shape).unwrap()
    }

    #[test]
    fn scalar_and_tensor_log_prob_agree() {
        let a = [0.3f32, -0.2];
        let m = [0.1f32, 0.4];
        let s = [-0.5f32, 0.2];
        let lp = gaussian_log_prob(&t(&a, &[1, 2]), &t(&m, &[1, 2]), &t(&s, &[1, 2])).unwrap().item() as f64;
        assert!((lp - gaussian_log_prob_scalar(&a, &m, &s)).abs() < 1e-5);
    }

    #[test]
    fn bad_sigma_bounds() {
        assert!(clamp_sigma(&Tensor::zeros(&[2]), 0.0, 1.0).is_err());
        assert!(clamp_sigma(&Tensor::zeros(&[2]), 0.5, 0.1).is_err());
    }

    #[test]
    fn bounds_penalty_only_outside() {
        let p = bounds_penalty(&t(&[0.5, -0.9, 1.5, -3.0], &[2, 2])).unwrap().item();
        assert!((p - (0.25 + 4.0) / 2.0).abs() < 1e-6);
    }
}
