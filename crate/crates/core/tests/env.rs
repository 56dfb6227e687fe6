use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symfuse_core::env::{EnvConfig, Environment, InsertionEnv, ObsMode, ProbeEnv, ACTION_DIM};
use symfuse_core::Error;

fn env(mode: ObsMode) -> InsertionEnv {
    InsertionEnv::new(EnvConfig { mode, image_size: 32, tactile_size: 16, ..EnvConfig::default() }).unwrap()
}

/// Servo over the true socket axis, then push straight down.
fn scripted(e: &InsertionEnv) -> [f32; ACTION_DIM] {
    let s = e.state();
    let step = e.config().dynamics.action_step;
    let aligned = s.lateral_error() < 0.0015;
    [
        (-s.pos[0] / step) as f32,
        (-s.pos[1] / step) as f32,
        if aligned { -1.0 } else { 0.0 },
        0.0,
        0.0,
        0.0,
    ]
}

#[test]
fn same_seed_same_trajectory() {
    let run = |seed| {
        let mut e = env(ObsMode::Fusion);
        let mut obs = vec![e.reset(seed).unwrap()];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a: Vec<f32> = (0..ACTION_DIM).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            obs.push(e.step(&a).unwrap().observation);
        }
        obs
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5)[0], run(6)[0]);
}

#[test]
fn reset_samples_stay_inside_scaled_bounds() {
    let cfg = EnvConfig::default();
    let bounds = cfg.effective_bounds();
    let mut e = InsertionEnv::new(cfg).unwrap();
    let n = 2000;
    let mut sums = [0.0f64; 15];
    for seed in 0..n {
        e.reset(seed).unwrap();
        let values = e.sampled_params().unwrap().values();
        for ((name, b), (v, sum)) in bounds.rows().iter().zip(values.iter().zip(sums.iter_mut())) {
            assert!(b.contains(*v), "{name} = {v} outside [{}, {}]", b.lo, b.hi);
            *sum += v;
        }
    }
    for ((name, b), sum) in bounds.rows().iter().zip(sums) {
        let width = b.hi - b.lo;
        // Uniform mean has standard error width/√(12n); allow 5 of them.
        let tol = 5.0 * width / (12.0 * n as f64).sqrt() + 1e-12;
        assert!((sum / n as f64 - b.mid()).abs() <= tol, "{name} mean off");
    }
}

#[test]
fn desk_scale_halves_pose_ranges() {
    let full = EnvConfig { desk_scale: 1.0, ..EnvConfig::default() }.effective_bounds();
    let desk = EnvConfig::default().effective_bounds();
    assert!((desk.ee_x.hi - desk.ee_x.lo - 0.5 * (full.ee_x.hi - full.ee_x.lo)).abs() < 1e-12);
    assert_eq!(desk.stiffness, full.stiffness);
}

#[test]
fn aligned_straight_down_succeeds() {
    let mut e = env(ObsMode::Privileged);
    let mut successes = 0;
    for seed in 0..64 {
        e.reset(seed).unwrap();
        loop {
            let a = scripted(&e);
            let r = e.step(&a).unwrap();
            if r.done {
                successes += r.success as usize;
                assert_eq!(r.reward, if r.success { 1.0 } else { 0.0 });
                break;
            }
            assert_eq!(r.reward, 0.0);
        }
    }
    assert_eq!(successes, 64);
}

#[test]
fn zero_action_times_out() {
    let mut e = env(ObsMode::Privileged);
    e.reset(3).unwrap();
    let mut steps = 0;
    loop {
        let r = e.step(&[0.0; ACTION_DIM]).unwrap();
        steps += 1;
        if r.done {
            assert!(!r.success);
            break;
        }
    }
    assert_eq!(steps, 128);
    assert!(matches!(e.step(&[0.0; ACTION_DIM]), Err(Error::StepAfterDone)));
}

#[test]
fn bad_actions_are_rejected() {
    let mut e = env(ObsMode::Privileged);
    e.reset(0).unwrap();
    assert!(matches!(e.step(&[0.0; 5]), Err(Error::Env(_))));
    assert!(matches!(e.step(&[f32::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]), Err(Error::Env(_))));
}

#[test]
fn observation_shapes_follow_mode() {
    for (mode, dim, image, tactile) in [
        (ObsMode::Privileged, 13, false, false),
        (ObsMode::PrivilegedForce, 19, false, false),
        (ObsMode::Tactile, 8, false, true),
        (ObsMode::Wrist, 8, true, false),
        (ObsMode::WristForce, 14, true, false),
        (ObsMode::Fusion, 8, true, true),
    ] {
        let mut e = env(mode);
        let o = e.reset(1).unwrap();
        assert_eq!(o.vector.len(), dim, "{mode:?}");
        assert_eq!(o.image.as_ref().map(Vec::len), image.then_some(3 * 32 * 32));
        assert_eq!(o.tactile.as_ref().map(|t| t[0].len()), tactile.then_some(3 * 16 * 16));
        assert_eq!(e.spec().vector_dim, dim);
    }
}

#[test]
fn lateral_wall_contact_gives_opposite_shear() {
    let mut e = InsertionEnv::new(EnvConfig { mode: ObsMode::Tactile, tactile_size: 16, tactile_noise: 0.0, ..EnvConfig::default() }).unwrap();
    e.reset(11).unwrap();
    // Peg tip inside the bore, pressed into the +y wall.
    let geo = e.config().geometry.clone();
    let mut state = e.state().clone();
    state.pos = [0.0, geo.clearance() + 0.0005, 0.5 * geo.bore_depth];
    state.yaw = 0.0;
    state.target = [0.0, geo.clearance() + 0.003, 0.5 * geo.bore_depth];
    e.set_state(state);
    e.hold();
    let f = e.state().contact_force;
    assert!(f[1] < -0.1, "no lateral contact: {f:?}");
    let (l, r) = e.clean_tactile();
    let plane = 16 * 16;
    let row_shear = |x: &[f32]| x[..plane].iter().map(|&v| v as f64).sum::<f64>();
    let (sl, sr) = (row_shear(&l), row_shear(&r));
    assert!(sl.abs() > 1e-3);
    assert!(sl * sr < 0.0, "row shear should flip sign between pads: {sl} vs {sr}");
}

#[test]
fn probe_optimal_return_by_hand() {
    assert_eq!(ProbeEnv::optimal_return(0.0), 16.0);
    // 0.25 + 0.5 + 0.75 on the way in, then 13 steps at the origin.
    assert_eq!(ProbeEnv::optimal_return(-1.0), 14.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn observations_are_finite(seed in any::<u64>(), actions in prop::collection::vec(prop::array::uniform6(-3.0f32..3.0), 1..40)) {
        let mut e = env(ObsMode::Fusion);
        let o = e.reset(seed).unwrap();
        prop_assert!(o.vector.iter().all(|v| v.is_finite()));
        for a in actions {
            let r = e.step(&a).unwrap();
            let o = &r.observation;
            prop_assert!(o.vector.iter().all(|v| v.is_finite()));
            prop_assert!(o.image.as_ref().unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
            let plane = 16 * 16;
            for pad in o.tactile.as_ref().unwrap() {
                prop_assert!(pad.iter().all(|v| v.is_finite()));
                prop_assert!(pad[2 * plane..].iter().all(|&v| v >= 0.0));
            }
            if r.done { break; }
        }
    }
}
