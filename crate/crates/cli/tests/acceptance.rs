//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! `cargo test -p symfuse-cli --test acceptance -- 3 5` runs a subset.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use symfuse_autograd::gradcheck::GradCheckConfig;
use symfuse_autograd::Tensor;
use symfuse_core::encoders::{ConvEncoder, Profile};
use symfuse_core::env::{ObsSpec, Observation};
use symfuse_core::fusion::FusionStrategy;
use symfuse_core::harness::gradcheck::{all_targets, run_suite};
use symfuse_core::ppo::{gae, ObsBatch, PolicyConfig, PolicyNet};

type Outcome = Result<String, String>;

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn(&Path) -> Outcome); 10] = [
        (1, "gradient suite", gradient_suite),
        (2, "shape conformance", shapes),
        (3, "symmetry-loss ground truth", symmetry_ground_truth),
        (4, "GAE oracle", gae_oracle),
        (5, "attention oracle", attention_oracle),
        (6, "privileged learning sanity", learning_sanity),
        (7, "ablation presets", ablation_presets),
        (8, "zero-lambda equivalence", zero_lambda),
        (9, "bench protocol", bench_protocol),
        (10, "determinism", determinism),
    ];
    let work = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let dir = work.path().join(format!("c{id}"));
        std::fs::create_dir_all(&dir).expect("criterion dir");
        let started = Instant::now();
        let outcome = run(&dir);
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn symfuse(bin: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin).args(args).env("ARTIFACT_THREADS", threads()).output().map_err(|e| format!("spawn {}: {e}", bin.display()))?;
    if !out.status.success() {
        let err = String::from_utf8_lossy(&out.stderr);
        let tail: Vec<&str> = err.lines().rev().take(3).collect();
        return Err(format!("`symfuse {}` exited with {}: {}", args.join(" "), out.status, tail.join(" | ")));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn threads() -> String {
    std::env::var("ARTIFACT_THREADS").unwrap_or_else(|_| std::thread::available_parallelism().map_or(1, |n| n.get()).to_string())
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_symfuse"))
}

fn read_json(path: &Path) -> Result<Value, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("read {}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("parse {}: {e}", path.display()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn gradient_suite(_: &Path) -> Outcome {
    let started = Instant::now();
    let targets = all_targets();
    let report = run_suite(&targets, 10, &GradCheckConfig::default()).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let names: Vec<&str> = report.targets.iter().map(|t| t.name.as_str()).collect();
    for need in ["encoder", "fusion_naive", "fusion_gated", "fusion_cmt", "symmetry_loss", "ppo_loss"] {
        check(names.contains(&need), || format!("target {need} missing from the suite"))?;
    }
    let worst = report.targets.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    if let Some(bad) = report.targets.iter().find(|t| !t.passed) {
        return Err(format!("{} max rel err {:.3e} at seed {}", bad.name, bad.max_rel_err, bad.worst_seed));
    }
    check(report.rel_tol == 1e-3, || format!("tolerance {}", report.rel_tol))?;
    check(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} targets x 10 seeds, worst rel err {worst:.2e}, {secs:.1}s", names.len()))
}

fn shapes(_: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (spec, input, want) in [
        (Profile::Full.vision(), [1, 3, 64, 64], [[32, 29, 29], [64, 26, 26], [64, 24, 24]]),
        (Profile::Full.tactile(), [1, 3, 32, 32], [[32, 13, 13], [64, 10, 10], [64, 8, 8]]),
    ] {
        let enc = ConvEncoder::new(&mut rng, spec).map_err(|e| e.to_string())?;
        let (maps, z) = enc.forward_trace(&Tensor::zeros(&input)).map_err(|e| e.to_string())?;
        let got: Vec<&[usize]> = maps.iter().map(|m| &m.shape()[1..]).collect();
        check(got == want.iter().map(|w| &w[..]).collect::<Vec<_>>(), || format!("feature maps {got:?}, expected {want:?}"))?;
        check(z.shape() == [1, 128], || format!("embedding {:?}", z.shape()))?;
    }
    let spec = ObsSpec { vector_dim: 8, image: Some([3, 64, 64]), tactile: Some([3, 32, 32]) };
    let obs = Observation { vector: vec![0.0; 8], image: Some(vec![0.5; 3 * 64 * 64]), tactile: Some([vec![0.0; 3 * 32 * 32], vec![0.0; 3 * 32 * 32]]) };
    let batch = ObsBatch::from_observations(&[&obs], &spec).map_err(|e| e.to_string())?;
    for (strategy, width) in [(FusionStrategy::Naive, 384), (FusionStrategy::Gated, 128), (FusionStrategy::Cmt, 256)] {
        let cfg = PolicyConfig { fusion: Some(strategy), ..PolicyConfig::default() };
        let policy = PolicyNet::new(&mut rng, spec, &cfg, (0.05, 1.0)).map_err(|e| e.to_string())?;
        let fused = policy.features(&batch).map_err(|e| e.to_string())?.shape()[1] - spec.vector_dim;
        check(fused == width, || format!("{strategy:?} fused width {fused}, expected {width}"))?;
        let (out, _) = policy.act(&batch, &policy.initial_state(1)).map_err(|e| e.to_string())?;
        let heads = (out.mean.shape()[1], out.log_std.shape()[1], out.value.shape().len());
        check(heads == (6, 6, 1), || format!("{strategy:?} heads {heads:?}"))?;
    }
    Ok("29/26/24, 13/10/8, embed 128, fusion 384/128/256, heads 6/6/1".into())
}

#[cfg(feature = "symmetry")]
fn symmetry_ground_truth(_: &Path) -> Outcome {
    use symfuse_core::encoders::TactileEncoders;
    use symfuse_core::env::{EnvConfig, Environment, InsertionEnv, ObsMode};
    use symfuse_core::symmetry::{mirror, symmetry_loss, FlipAxis};

    let n = 32;
    let err = |e: symfuse_core::Error| e.to_string();
    let mut env = InsertionEnv::new(EnvConfig { mode: ObsMode::Tactile, tactile_noise: 0.0, ..EnvConfig::default() }).map_err(err)?;
    let enc = TactileEncoders::new(&mut ChaCha8Rng::seed_from_u64(0), Profile::Full.tactile(), true).map_err(err)?;
    let pad = |x: Vec<f32>| Tensor::new(x, &[1, 3, n, n]).expect("pad shape");
    let grasps = 32;
    for seed in 0..grasps {
        let [l, r] = env.reset(seed).map_err(err)?.tactile.ok_or("no tactile field")?;
        let (l, r) = (pad(l), pad(r));
        let flipped = mirror(&r, FlipAxis::Rows).map_err(err)?;
        let bitwise = l.data().iter().zip(flipped.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        check(bitwise, || format!("reset {seed}: left != flip(right)"))?;
        let loss = symmetry_loss(&l, &r, &enc, FlipAxis::Rows).map_err(err)?.item();
        check(loss == 0.0, || format!("reset {seed}: loss {loss} on a symmetric grasp"))?;
    }
    // Peg inside the bore pressed into the +y wall.
    env.reset(0).map_err(err)?;
    let geo = env.config().geometry.clone();
    let mut state = env.state().clone();
    state.pos = [0.0, geo.clearance() + 0.0005, 0.5 * geo.bore_depth];
    state.target = state.pos;
    state.yaw = 0.0;
    state.yaw_target = 0.0;
    env.set_state(state);
    let step = env.step(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).map_err(err)?;
    let [l, r] = step.observation.tactile.ok_or("no tactile field")?;
    let loss = symmetry_loss(&pad(l), &pad(r), &enc, FlipAxis::Rows).map_err(err)?.item();
    check(loss > 0.0, || format!("asymmetric contact gave loss {loss}"))?;
    Ok(format!("{grasps} symmetric grasps bitwise mirrored with loss 0, wall contact loss {loss:.3e}"))
}

#[cfg(not(feature = "symmetry"))]
fn symmetry_ground_truth(_: &Path) -> Outcome {
    Err("built without the `symmetry` feature".into())
}

fn gae_oracle(_: &Path) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (r, v, done, gamma, lambda) = oracle::random_trajectory(&mut rng);
        let (adv, _) = gae(&r, &v, &done, gamma, lambda).map_err(|e| e.to_string())?;
        for (a, b) in adv.iter().zip(oracle::gae_brute_force(&r, &v, &done, gamma, lambda)) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(worst <= 1e-6, || format!("max deviation {worst:.3e}"))?;
    check(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("100 trajectories, max deviation {worst:.1e}"))
}

fn attention_oracle(_: &Path) -> Outcome {
    let worst = oracle::cmt_worst_deviation(50);
    check(worst <= 1e-5, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("50 inputs, max deviation {worst:.1e}"))
}

fn learning_sanity(dir: &Path) -> Outcome {
    let out = dir.join("privileged");
    let started = Instant::now();
    symfuse(&bin(), &["train", "--preset", "privileged", "--seed", "0", "--steps", "200000", "--episodes", "256", "--out", path_str(&out), "-q"])?;
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    let cfg = read_json(&out.join("config.json"))?;
    check(cfg["env"]["desk_scale"] == 0.5, || format!("desk_scale {}", cfg["env"]["desk_scale"]))?;
    check(cfg["ppo"]["num_envs"] == 16, || format!("num_envs {}", cfg["ppo"]["num_envs"]))?;
    let summary = read_json(&out.join("summary.json"))?;
    let seed = &summary["seeds"][0];
    let steps = seed["env_steps"].as_u64().unwrap_or(u64::MAX);
    let success = seed["success_rate"].as_f64().unwrap_or(0.0);
    check(summary["eval_episodes"] == 256, || "eval episode count".into())?;
    check(steps <= 200_000, || format!("used {steps} env steps"))?;
    check(minutes <= 30.0, || format!("took {minutes:.1} min"))?;
    check(success >= 0.8, || format!("success {:.1}% after {steps} steps", 100.0 * success))?;
    Ok(format!("success {:.1}% over 256 episodes after {steps} steps, {minutes:.1} min", 100.0 * success))
}

fn ablation_presets(dir: &Path) -> Outcome {
    let listing = symfuse(&bin(), &["presets"])?;
    let names: Vec<String> = listing.lines().filter_map(|l| l.split_whitespace().next()).map(String::from).collect();
    let mut rows = Vec::new();
    let mut success = std::collections::HashMap::new();
    for name in &names {
        let out = dir.join(name.replace('+', "_"));
        symfuse(&bin(), &["train", "--preset", name, "--seed", "0", "--steps", "8192", "--episodes", "32", "--out", path_str(&out), "-q"])?;
        let metrics = std::fs::read_to_string(out.join("seed_0/metrics.csv")).map_err(|e| e.to_string())?;
        let header: Vec<&str> = metrics.lines().next().unwrap_or("").split(',').collect();
        check(header.contains(&"success_rate") && header.contains(&"mean_steps_to_succeed"), || format!("{name}: metrics header {header:?}"))?;
        let summary = read_json(&out.join("summary.json"))?;
        let seed = &summary["seeds"][0];
        let steps = seed["env_steps"].as_u64().unwrap_or(0);
        check(steps >= 2000, || format!("{name}: only {steps} steps"))?;
        let rate = seed["success_rate"].as_f64().ok_or_else(|| format!("{name}: no success rate"))?;
        let to_succeed = seed["mean_steps_to_succeed"].as_f64().map_or("-".to_string(), |s| format!("{s:.1}"));
        rows.push(format!("{name} {:.0}%/{to_succeed}", 100.0 * rate));
        success.insert(name.clone(), rate);
    }
    check(names.len() == 10, || format!("{} presets", names.len()))?;
    let get = |n: &str| success.get(n).copied().unwrap_or(f64::NAN);
    let (cmt, gated, naive) = (get("fusion-cmt"), get("fusion-gated"), get("fusion-naive"));
    let ordering = if cmt >= gated && gated >= naive { "holds" } else { "does not hold" };
    Ok(format!(
        "{} (eval success/steps-to-succeed); cmt >= gated >= naive {ordering} at this budget ({:.0}% / {:.0}% / {:.0}%)",
        rows.join(", "),
        100.0 * cmt,
        100.0 * gated,
        100.0 * naive
    ))
}

/// Builds the CLI into a private target directory.
fn build_cli(target: &Path, symmetry: bool) -> Result<PathBuf, String> {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("Cargo.toml");
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let mut cmd = Command::new(cargo);
    cmd.args(["build", "--quiet", "--bin", "symfuse", "--manifest-path", path_str(&manifest), "--target-dir", path_str(target)]);
    if !symmetry {
        cmd.arg("--no-default-features");
    }
    let status = cmd.status().map_err(|e| format!("cargo: {e}"))?;
    check(status.success(), || format!("cargo build (symmetry={symmetry}) failed"))?;
    Ok(target.join("debug").join(format!("symfuse{}", std::env::consts::EXE_SUFFIX)))
}

/// Metrics with the wall-clock column removed.
fn metrics_without_time(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("read {}: {e}", path.display()))?;
    let header: Vec<&str> = text.lines().next().unwrap_or("").split(',').collect();
    let wall = header.iter().position(|h| *h == "wall_seconds").ok_or("no wall_seconds column")?;
    Ok(text
        .lines()
        .map(|line| line.split(',').enumerate().filter(|(i, _)| *i != wall).map(|(_, f)| f).collect::<Vec<_>>().join(","))
        .collect())
}

fn zero_lambda(dir: &Path) -> Outcome {
    let target = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance");
    let without = build_cli(&target.join("no-symmetry"), false)?;
    let with = if cfg!(feature = "symmetry") { bin() } else { build_cli(&target.join("symmetry"), true)? };
    let mut runs = Vec::new();
    for (label, exe) in [("with", &with), ("without", &without)] {
        let out = dir.join(label);
        symfuse(exe, &["train", "--preset", "fusion-cmt", "--seed", "0", "--steps", "16384", "--episodes", "16", "--out", path_str(&out), "-q"])?;
        runs.push(out);
    }
    let (a, b) = (metrics_without_time(&runs[0].join("seed_0/metrics.csv"))?, metrics_without_time(&runs[1].join("seed_0/metrics.csv"))?);
    check(a.len() > 2, || "no iterations logged".into())?;
    check(a == b, || "per-iteration losses differ between builds".into())?;
    for file in ["summary.json", "seed_0/eval.json"] {
        let same = std::fs::read(runs[0].join(file)).ok() == std::fs::read(runs[1].join(file)).ok();
        check(same, || format!("{file} differs between builds"))?;
    }
    Ok(format!("{} iterations of losses bit-identical with and without the symmetry module", a.len() - 1))
}

fn bench_protocol(_: &Path) -> Outcome {
    let presets = ["fusion-naive", "fusion-gated", "fusion-cmt"];
    let mut args = vec!["bench"];
    for p in &presets {
        args.extend(["--preset", p]);
    }
    let reports: Vec<Value> = serde_json::from_str(&symfuse(&bin(), &args)?).map_err(|e| e.to_string())?;
    check(reports.len() == 3, || format!("{} reports", reports.len()))?;
    let mut latency = Vec::new();
    for (preset, report) in presets.iter().zip(&reports) {
        let lat = report["latency_ms"].as_f64().ok_or("no latency")?;
        let fps = report["throughput_fps"].as_f64().ok_or("no throughput")?;
        check(report["label"] == *preset, || format!("report order: {}", report["label"]))?;
        check(report["passes"] == 1000, || format!("{preset}: {} passes", report["passes"]))?;
        check(report["warmup"].as_u64().unwrap_or(0) > 0, || format!("{preset}: no warmup"))?;
        check(fps == 1000.0 / lat, || format!("{preset}: throughput {fps} != 1000/{lat}"))?;
        latency.push(lat);
    }
    let table = presets.iter().zip(&latency).map(|(p, l)| format!("{p} {l:.3} ms / {:.0} fps", 1000.0 / l)).collect::<Vec<_>>().join(", ");
    for (preset, lat) in presets.iter().zip(&latency) {
        check(1000.0 / lat > 60.0, || format!("{preset} below 60 fps: {table}"))?;
    }
    check(latency[2] > latency[0], || format!("cmt latency not above naive: {table}"))?;
    Ok(format!("interleaved: {table}"))
}

fn determinism(dir: &Path) -> Outcome {
    let preset = if cfg!(feature = "symmetry") { "fusion-cmt-sym" } else { "fusion-cmt" };
    let mut summaries = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(run);
        let args = ["train", "--preset", preset, "--seed", "0", "--steps", "16384", "--episodes", "32", "--out", path_str(&out), "-q"];
        symfuse(&bin(), &args)?;
        summaries.push(std::fs::read(out.join("summary.json")).map_err(|e| e.to_string())?);
    }
    check(summaries[0] == summaries[1], || "summary.json differs between runs".into())?;
    Ok(format!("{preset} summary.json identical across two runs ({} bytes)", summaries[0].len()))
}
