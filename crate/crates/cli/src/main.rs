use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symfuse_core::env::Environment;
use symfuse_core::harness::gradcheck::{all_targets, run_suite};
use symfuse_core::harness::runner::{build_envs, build_policy, save_json};
use symfuse_core::harness::{bench_interleaved, eval_policy, find_preset, load_policy, train, RunConfig, TrainOptions, PRESETS};
use symfuse_core::{Error, Result};
use symfuse_autograd::gradcheck::GradCheckConfig;

#[derive(Parser)]
#[command(name = "symfuse", version, about = "Train, evaluate and benchmark visuo-tactile insertion policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config, then evaluate each final policy.
    Train(TrainArgs),
    /// Deterministic rollouts of a checkpointed policy.
    Eval(EvalArgs),
    /// Batch-1 inference latency, throughput and memory estimate.
    Bench(BenchArgs),
    /// Finite-difference check of every op and module composition.
    Gradcheck(GradcheckArgs),
    /// List the ablation presets, or print one as a config file.
    Presets {
        /// Print this preset's full config as JSON.
        name: Option<String>,
    },
}

#[derive(Args)]
struct Source {
    /// JSON run config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named ablation preset (see `symfuse presets`).
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<Option<RunConfig>> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path).map(Some),
            (None, Some(name)) => Ok(Some(find_preset(name)?.config())),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: Source,
    /// Seeds to run, replacing the config's list. Repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory, replacing the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Environment-step budget per seed, replacing `total_steps`.
    #[arg(long)]
    steps: Option<u64>,
    /// Evaluation episodes after training, replacing `eval_episodes`.
    #[arg(long)]
    episodes: Option<usize>,
    /// Continue each seed from its last checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Suppress per-iteration progress lines.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 256)]
    episodes: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpointed policy to time. Repeatable.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<PathBuf>,
    /// Run config whose freshly initialized policy is timed. Repeatable.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Preset whose freshly initialized policy is timed. Repeatable.
    #[arg(long = "preset")]
    presets: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    passes: usize,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random seeds per target.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Only targets whose name contains this string.
    #[arg(long)]
    filter: Option<String>,
    /// Test fixture: scale the conv2d kernel adjoint by a wrong constant.
    #[arg(long, hide = true)]
    corrupt_conv_adjoint: bool,
}

fn threads() -> Result<usize> {
    match std::env::var("ARTIFACT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::config("ARTIFACT_THREADS", format!("expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Writes a line to stdout. A closed pipe (`symfuse presets x | head`) is not
/// an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = args.source.load()?.ok_or_else(|| Error::config("config", "train needs --config or --preset"))?;
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    if let Some(steps) = args.steps {
        cfg.total_steps = steps;
    }
    if let Some(n) = args.episodes {
        cfg.eval_episodes = n;
    }
    cfg.validate()?;
    let progress: Option<Box<dyn FnMut(u64, &symfuse_core::ppo::IterationStats)>> = (!args.quiet).then(|| {
        Box::new(|seed: u64, s: &symfuse_core::ppo::IterationStats| {
            let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1}%", 100.0 * x));
            eprintln!(
                "seed {seed} iter {:>4} steps {:>8} success {:>6} l_ppo {:+.4} sigma {:.3} ({:.1}s)",
                s.iteration,
                s.env_steps,
                pct(s.success_rate),
                s.l_ppo,
                s.sigma_mean,
                s.wall_seconds
            );
        }) as Box<dyn FnMut(u64, &symfuse_core::ppo::IterationStats)>
    });
    let mut opts = TrainOptions { threads: threads()?, resume: args.resume, progress };
    let summary = train(&cfg, &mut opts)?;
    print_json(&summary)
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let (cfg, ckpt, policy) = load_policy(&args.checkpoint)?;
    let report = eval_policy(&cfg, &policy, ckpt.seed, args.episodes, threads()?)?;
    match args.out {
        Some(path) => save_json(&path, &report),
        None => print_json(&report),
    }
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let mut policies = Vec::new();
    for path in &args.checkpoints {
        let (cfg, _, policy) = load_policy(path)?;
        policies.push((path.display().to_string(), cfg, policy));
    }
    for path in &args.configs {
        let cfg = RunConfig::load(path)?;
        let policy = build_policy(&cfg, cfg.seeds[0])?;
        policies.push((path.display().to_string(), cfg, policy));
    }
    for name in &args.presets {
        let cfg = find_preset(name)?.config();
        let policy = build_policy(&cfg, cfg.seeds[0])?;
        policies.push((name.clone(), cfg, policy));
    }
    if policies.is_empty() {
        return Err(Error::config("checkpoint", "bench needs --checkpoint, --config or --preset"));
    }
    let mut observations = Vec::with_capacity(policies.len());
    for (_, cfg, _) in &policies {
        let mut env = build_envs(cfg, 1)?.pop().expect("one environment");
        observations.push(env.reset(0)?);
    }
    let entries: Vec<_> = policies.iter().zip(&observations).map(|((label, _, policy), obs)| (label.as_str(), policy, obs)).collect();
    let reports = bench_interleaved(&entries, args.warmup, args.passes)?;
    // A single policy prints a bare report; several print an array.
    let value = match reports.as_slice() {
        [one] => serde_json::to_value(one)?,
        many => serde_json::to_value(many)?,
    };
    if let Some(path) = &args.out {
        save_json(path, &value)?;
    }
    print_json(&value)
}

fn run_gradcheck(args: GradcheckArgs) -> Result<bool> {
    if args.corrupt_conv_adjoint {
        symfuse_autograd::fault::set_conv2d_adjoint_corruption(true);
    }
    let mut targets = all_targets();
    if let Some(f) = &args.filter {
        targets.retain(|t| t.name.contains(f.as_str()));
    }
    if targets.is_empty() {
        return Err(Error::config("filter", "no gradient target matches"));
    }
    let report = run_suite(&targets, args.seeds, &GradCheckConfig::default())?;
    emit(report.table().trim_end());
    let failed: Vec<&str> = report.targets.iter().filter(|t| !t.passed).map(|t| t.name.as_str()).collect();
    if failed.is_empty() {
        emit(&format!("all {} targets passed at rel tol {:.0e} over {} seeds", report.targets.len(), report.rel_tol, report.seeds));
    } else {
        for t in report.targets.iter().filter(|t| !t.passed) {
            eprintln!("gradient check failed: {} max rel err {:.3e} at seed {}", t.name, t.max_rel_err, t.worst_seed);
        }
    }
    Ok(failed.is_empty())
}

fn run_presets(name: Option<String>) -> Result<()> {
    match name {
        Some(name) => {
            emit(&find_preset(&name)?.config().to_json());
        }
        None => {
            for p in &PRESETS {
                emit(&format!("{:<18} {}", p.name, p.label));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Bench(a) => run_bench(a),
        Command::Gradcheck(a) => match run_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
        Command::Presets { name } => run_presets(name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Numerical { dump: Some(path), .. } = &e {
                eprintln!("state at failure saved to {}", path.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
