mod oracle;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symfuse_autograd::Tensor;
use symfuse_core::nn::{Linear, Module};
use symfuse_core::ppo::{clamp_sigma, clip_grad_norm, gae, gaussian_log_prob, grad_norm, ppo_loss, LossBatch, PolicyOutput, PpoConfig};
use symfuse_core::Error;

#[test]
fn gae_matches_brute_force_expansion() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (r, v, done, gamma, lambda) = oracle::random_trajectory(&mut rng);
        let (adv, ret) = gae(&r, &v, &done, gamma, lambda).unwrap();
        for (t, want) in oracle::gae_brute_force(&r, &v, &done, gamma, lambda).iter().enumerate() {
            worst = worst.max((adv[t] - want).abs());
            assert!((ret[t] - (adv[t] + v[t])).abs() < 1e-12);
        }
    }
    assert!(worst < 1e-6, "max deviation {worst:.3e}");
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn gae_default_settings_single_step() {
    // δ = 1 + 0.99·2 − 0.5 for a non-terminal single step.
    let (adv, _) = gae(&[1.0], &[0.5, 2.0], &[false], 0.99, 0.95).unwrap();
    assert!((adv[0] - 2.48).abs() < 1e-12);
    let (adv, _) = gae(&[1.0], &[0.5, 2.0], &[true], 0.99, 0.95).unwrap();
    assert!((adv[0] - 0.5).abs() < 1e-12);
}

fn t(v: Vec<f32>, shape: &[usize]) -> Tensor {
    Tensor::new(v, shape).unwrap()
}

/// Batch whose new/old probability ratio is exactly `ratio` per row.
fn setup(advantages: &[f32], ratio: f32) -> (PolicyOutput, LossBatch) {
    let n = advantages.len();
    let mean = t(vec![0.1; n * 6], &[n, 6]).requires_grad();
    let log_std = t(vec![-0.5; n * 6], &[n, 6]);
    let actions = t((0..n * 6).map(|i| 0.05 * i as f32 - 0.3).collect(), &[n, 6]);
    let lp = gaussian_log_prob(&actions, &mean, &log_std).unwrap();
    let old = t(lp.data().iter().map(|l| l - ratio.ln()).collect(), &[n]);
    let out = PolicyOutput { mean, log_std, value: t(vec![0.0; n], &[n]) };
    let batch = LossBatch { actions, old_log_prob: old, advantages: t(advantages.to_vec(), &[n]), returns: t(vec![0.0; n], &[n]) };
    (out, batch)
}

fn policy_only() -> PpoConfig {
    PpoConfig { value_coef: 0.0, bounds_coef: 0.0, entropy_coef: 0.0, ..PpoConfig::default() }
}

#[test]
fn unit_ratio_gives_negative_mean_advantage() {
    let adv = [0.5, -1.0, 2.0, 0.25];
    let (out, batch) = setup(&adv, 1.0);
    let (loss, stats) = ppo_loss(&out, &batch, &policy_only()).unwrap();
    let want = -(0.5 - 1.0 + 2.0 + 0.25) / 4.0;
    assert!((loss.item() - want).abs() < 1e-5, "{} vs {want}", loss.item());
    assert_eq!(stats.clip_fraction, 0.0);
}

#[test]
fn ratio_two_clips_positive_advantages() {
    let (out, batch) = setup(&[1.0], 2.0);
    let (loss, stats) = ppo_loss(&out, &batch, &policy_only()).unwrap();
    assert!((loss.item() + 1.2).abs() < 1e-5, "{}", loss.item());
    assert_eq!(stats.clip_fraction, 1.0);
    // With a negative advantage the unclipped term is the smaller one.
    let (out, batch) = setup(&[-1.0], 2.0);
    let (loss, _) = ppo_loss(&out, &batch, &policy_only()).unwrap();
    assert!((loss.item() - 2.0).abs() < 1e-5);
}

#[test]
fn clipped_ratio_blocks_the_gradient() {
    let (out, batch) = setup(&[1.0, 1.0], 2.0);
    let (loss, _) = ppo_loss(&out, &batch, &policy_only()).unwrap();
    loss.backward().unwrap();
    assert!(out.mean.grad().unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn total_is_the_weighted_sum_without_entropy() {
    let (out, mut batch) = setup(&[0.3, -0.7], 1.3);
    batch.returns = t(vec![1.0, -0.5], &[2]);
    let out = PolicyOutput { mean: t(vec![1.5; 12], &[2, 6]), ..out };
    let cfg = PpoConfig::default();
    let (loss, s) = ppo_loss(&out, &batch, &cfg).unwrap();
    let want = s.policy + cfg.value_coef as f32 * s.value + cfg.bounds_coef as f32 * s.bounds;
    assert!((loss.item() - want).abs() < 1e-6);
    // 0.5² excess on each of 6 dims.
    assert!((s.bounds - 1.5).abs() < 1e-6);
    assert!((s.value - (1.0 + 0.25) / 2.0).abs() < 1e-6);
}

#[test]
fn non_finite_loss_is_a_numerical_error() {
    let (out, mut batch) = setup(&[1.0], 1.0);
    batch.returns = t(vec![f32::INFINITY], &[1]);
    assert!(matches!(ppo_loss(&out, &batch, &PpoConfig::default()), Err(Error::Numerical { .. })));
}

#[test]
fn sigma_clamp_values_and_gradient() {
    let raw = vec![-10.0f32, (0.2f32).ln(), -0.3, 5.0];
    let x = t(raw.clone(), &[4]).requires_grad();
    let sigma = clamp_sigma(&x, 0.05, 1.0).unwrap();
    let want = [0.05f32, 0.2, (-0.3f32).exp(), 1.0];
    for (s, w) in sigma.data().iter().zip(want) {
        assert!((s - w).abs() < 1e-6);
    }
    sigma.sum().backward().unwrap();
    let g = x.grad().unwrap();
    // Finite differences of the clamped map.
    let h = 1e-3f32;
    for i in 0..4 {
        let eval = |d: f32| {
            let mut v = raw.clone();
            v[i] += d;
            clamp_sigma(&t(v, &[4]), 0.05, 1.0).unwrap().data()[i] as f64
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h as f64);
        assert!((g[i] as f64 - fd).abs() < 1e-3, "coordinate {i}: {} vs {fd}", g[i]);
    }
    assert!(clamp_sigma(&x, 0.0, 1.0).is_err());
}

#[test]
fn gradient_clipping_rescales_to_the_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = Linear::new(&mut rng, 4, 3, true);
    let x = t(vec![1.0, 2.0, -1.0, 0.5], &[1, 4]);
    let out = layer.forward(&x).unwrap().sum();
    out.backward().unwrap();
    // Scale gradients to a norm of exactly 10.
    let n0 = grad_norm(&layer);
    layer.visit("", &mut |_, p| {
        let g: Vec<f32> = p.grad().unwrap().iter().map(|v| (*v as f64 * 10.0 / n0) as f32).collect();
        p.set_grad(g).unwrap();
    });
    assert!((grad_norm(&layer) - 10.0).abs() < 1e-5);
    let pre = clip_grad_norm(&layer, 1.0).unwrap();
    assert!((pre - 10.0).abs() < 1e-5);
    assert!((grad_norm(&layer) - 1.0).abs() < 1e-6);
    // Below the limit nothing changes.
    let before: Vec<Vec<f32>> = layer.named_params().iter().map(|(_, p)| p.grad().unwrap()).collect();
    clip_grad_norm(&layer, 5.0).unwrap();
    let after: Vec<Vec<f32>> = layer.named_params().iter().map(|(_, p)| p.grad().unwrap()).collect();
    assert_eq!(before, after);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipped_surrogate_is_a_lower_bound(adv in prop::collection::vec(-3.0f32..3.0, 1..8), log_ratio in -1.0f32..1.0) {
        let ratio = log_ratio.exp();
        let (out, batch) = setup(&adv, ratio);
        let (loss, _) = ppo_loss(&out, &batch, &policy_only()).unwrap();
        let unclipped = adv.iter().map(|a| ratio * a).sum::<f32>() / adv.len() as f32;
        prop_assert!(-loss.item() <= unclipped + 1e-4);
    }

    #[test]
    fn gae_with_zero_lambda_is_one_step_td(r in prop::collection::vec(-1.0f64..1.0, 1..16), gamma in 0.5f64..0.999) {
        let n = r.len();
        let v: Vec<f64> = (0..=n).map(|i| (i as f64 * 0.37).sin()).collect();
        let done = vec![false; n];
        let (adv, _) = gae(&r, &v, &done, gamma, 0.0).unwrap();
        for i in 0..n {
            prop_assert!((adv[i] - (r[i] + gamma * v[i + 1] - v[i])).abs() < 1e-12);
        }
    }
}
