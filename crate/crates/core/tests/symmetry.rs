#![cfg(feature = "symmetry")]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symfuse_autograd::Tensor;
use symfuse_core::encoders::{Profile, TactileEncoders};
use symfuse_core::env::{EnvConfig, Environment, InsertionEnv, ObsMode};
use symfuse_core::nn::Module;
use symfuse_core::symmetry::{calibrate, combine_losses, mirror, symmetry_loss, CalibrationReference, FlipAxis};

const N: usize = 16;

fn tactile_env() -> InsertionEnv {
    InsertionEnv::new(EnvConfig { mode: ObsMode::Tactile, tactile_size: N, tactile_noise: 0.0, ..EnvConfig::default() }).unwrap()
}

fn pad(x: Vec<f32>) -> Tensor {
    Tensor::new(x, &[1, 3, N, N]).unwrap()
}

fn encoders(seed: u64) -> TactileEncoders {
    TactileEncoders::new(&mut ChaCha8Rng::seed_from_u64(seed), Profile::Desk.tactile(), true).unwrap()
}

#[test]
fn symmetric_grasps_mirror_bitwise_and_cost_nothing() {
    let mut env = tactile_env();
    let enc = encoders(1);
    for seed in 0..32 {
        let obs = env.reset(seed).unwrap();
        let [l, r] = obs.tactile.unwrap();
        let (l, r) = (pad(l), pad(r));
        let flipped = mirror(&r, FlipAxis::Rows).unwrap();
        assert!(
            l.data().iter().zip(flipped.data().iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "seed {seed}: left pad is not the row-mirrored right pad"
        );
        assert_eq!(symmetry_loss(&l, &r, &enc, FlipAxis::Rows).unwrap().item(), 0.0);
    }
}

#[test]
fn asymmetric_contact_costs_something() {
    let mut env = tactile_env();
    let enc = encoders(2);
    env.reset(4).unwrap();
    // Start inside the bore against the +y wall and keep pushing into it.
    let geo = env.config().geometry.clone();
    let mut state = env.state().clone();
    state.pos = [0.0, geo.clearance() + 0.0005, 0.5 * geo.bore_depth];
    state.target = state.pos;
    state.yaw = 0.0;
    state.yaw_target = 0.0;
    env.set_state(state);
    let r = env.step(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let f = env.state().contact_force;
    assert!(f[1] < -0.1, "no wall contact: {f:?}");
    let [l, rr] = r.observation.tactile.unwrap();
    let loss = symmetry_loss(&pad(l), &pad(rr), &enc, FlipAxis::Rows).unwrap().item();
    assert!(loss > 0.0, "loss {loss}");
}

#[test]
fn measured_calibration_of_a_clean_grasp_is_mirror_symmetric() {
    let mut env = tactile_env();
    env.reset(7).unwrap();
    let reference = calibrate(&mut env, 5).unwrap();
    let flipped = mirror(&reference.right, FlipAxis::Rows).unwrap();
    assert_eq!(reference.left.data(), flipped.data());
    let zero = CalibrationReference::zero(&[3, N, N]);
    let (l, r) = zero.apply(&reference.left, &reference.right).unwrap();
    assert_eq!(l.data(), reference.left.data());
    assert_eq!(r.data(), reference.right.data());
}

fn grads(enc: &TactileEncoders) -> Vec<f32> {
    enc.named_params().iter().flat_map(|(_, t)| t.grad().unwrap_or_else(|| vec![0.0; t.numel()])).collect()
}

#[test]
fn regularizer_gradient_is_linear_in_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let enc = encoders(3);
    let field = |rng: &mut ChaCha8Rng| Tensor::new((0..2 * 3 * N * N).map(|_| rng.random_range(-1.0f32..1.0)).collect(), &[2, 3, N, N]).unwrap();
    let (l, r) = (field(&mut rng), field(&mut rng));
    let run = |lambda: f32| {
        enc.zero_grad();
        // A stand-in task loss that touches the same parameters.
        let l_task = enc.left().forward(&l).unwrap().sum();
        let l_sym = symmetry_loss(&l, &r, &enc, FlipAxis::Rows).unwrap();
        combine_losses(&l_task, &l_sym, lambda).unwrap().backward().unwrap();
        grads(&enc)
    };
    let (g0, g1, g3) = (run(0.0), run(1.0), run(3.0));
    let scale = g0.iter().chain(&g1).map(|v| v.abs()).fold(0.0f32, f32::max);
    for i in 0..g0.len() {
        let sym = g1[i] - g0[i];
        let predicted = g0[i] + 3.0 * sym;
        assert!((g3[i] - predicted).abs() <= 1e-4 * scale.max(1.0), "coordinate {i}: {} vs {predicted}", g3[i]);
    }
    assert!(g1.iter().zip(&g0).any(|(a, b)| a != b), "regularizer had no effect on gradients");
}

#[test]
fn zero_lambda_leaves_the_task_loss_untouched() {
    let p = Tensor::scalar(0.75);
    let s = Tensor::scalar(f32::MAX);
    assert_eq!(combine_losses(&p, &s, 0.0).unwrap().item().to_bits(), 0.75f32.to_bits());
}
