use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{episode_seed, success_metrics, EpisodeOutcome, Environment, InsertionEnv};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{load_params, param_records, Checkpoint, RngState};
use crate::harness::config::RunConfig;
use crate::ppo::{evaluate, IterationStats, PolicyNet, Trainer, TrainerConfig};

pub const METRICS_VERSION: u32 = 1;

/// One line of `metrics.csv`. The header is the field list below, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub metrics_version: u32,
    pub seed: u64,
    pub iteration: u64,
    pub env_steps: u64,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub success_rate: Option<f64>,
    pub mean_steps_to_succeed: Option<f64>,
    pub l_ppo: f64,
    pub l_sym: Option<f64>,
    pub value_loss: f64,
    pub sigma_mean: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: [&str; 17] = [
    "metrics_version",
    "seed",
    "iteration",
    "env_steps",
    "episodes",
    "mean_return",
    "success_rate",
    "mean_steps_to_succeed",
    "l_ppo",
    "l_sym",
    "value_loss",
    "sigma_mean",
    "sigma_min",
    "sigma_max",
    "grad_norm",
    "clip_fraction",
    "wall_seconds",
];

impl MetricsRow {
    pub fn new(seed: u64, s: &IterationStats) -> Self {
        MetricsRow {
            metrics_version: METRICS_VERSION,
            seed,
            iteration: s.iteration,
            env_steps: s.env_steps,
            episodes: s.episodes,
            mean_return: s.mean_return,
            success_rate: s.success_rate,
            mean_steps_to_succeed: s.mean_steps_to_succeed,
            l_ppo: s.l_ppo,
            l_sym: s.l_sym,
            value_loss: s.value_loss,
            sigma_mean: s.sigma_mean,
            sigma_min: s.sigma_min,
            sigma_max: s.sigma_max,
            grad_norm: s.grad_norm,
            clip_fraction: s.clip_fraction,
            wall_seconds: s.wall_seconds,
        }
    }
}

/// Appending CSV writer for [`MetricsRow`]s.
pub struct MetricsLog {
    writer: csv::Writer<std::fs::File>,
    path: PathBuf,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer.write_record(METRICS_HEADER)?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(MetricsLog { writer, path: path.to_path_buf() })
    }

    /// Opens an existing log for appending after checking its header and
    /// dropping rows newer than `iteration`, which a crash after the last
    /// checkpoint may have left behind.
    pub fn resume(path: &Path, iteration: u64) -> Result<Self> {
        let rows = read_metrics(path)?;
        let mut log = Self::create(path)?;
        for row in rows.iter().filter(|r| r.iteration <= iteration) {
            log.append(row)?;
        }
        Ok(log)
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::config("metrics.csv", format!("{} has header `{}`, expected version {METRICS_VERSION}", path.display(), header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        let row: MetricsRow = row?;
        if row.metrics_version != METRICS_VERSION {
            return Err(Error::config("metrics.csv", format!("row has metrics version {}, expected {METRICS_VERSION}", row.metrics_version)));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Evaluation output of one policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_seed: u64,
    pub num_episodes: usize,
    pub success_rate: f64,
    pub mean_steps_to_succeed: Option<f64>,
    /// Steps of each successful episode, in episode order.
    pub steps_to_succeed: Vec<usize>,
    pub episodes: Vec<EpisodeOutcome>,
}

impl EvalReport {
    pub fn new(run_seed: u64, episodes: Vec<EpisodeOutcome>) -> Result<Self> {
        let m = success_metrics(&episodes)?;
        Ok(EvalReport {
            run_seed,
            num_episodes: episodes.len(),
            success_rate: m.success_rate,
            mean_steps_to_succeed: m.mean_steps_to_succeed,
            steps_to_succeed: episodes.iter().filter(|e| e.success).map(|e| e.steps).collect(),
            episodes,
        })
    }
}

/// Per-seed result in the run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub iterations: u64,
    pub env_steps: u64,
    pub success_rate: f64,
    pub mean_steps_to_succeed: Option<f64>,
}

/// Multi-seed summary. Holds no wall-clock fields so identical runs produce
/// identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub fusion: Option<String>,
    pub lambda_sym: f64,
    pub total_steps: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<SeedSummary>,
    pub success_rate_mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single seed.
    pub success_rate_std: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn build_envs(cfg: &RunConfig, n: usize) -> Result<Vec<InsertionEnv>> {
    let env_cfg = cfg.env_config();
    (0..n).map(|_| InsertionEnv::new(env_cfg.clone())).collect()
}

/// Freshly initialized policy for `seed`.
pub fn build_policy(cfg: &RunConfig, seed: u64) -> Result<PolicyNet> {
    let spec = InsertionEnv::new(cfg.env_config())?.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, u64::MAX - 1, 0));
    PolicyNet::new(&mut rng, spec, &cfg.policy_config(), (cfg.ppo.sigma_min, cfg.ppo.sigma_max))
}

/// Policy and config stored in a checkpoint.
pub fn load_policy(path: &Path) -> Result<(RunConfig, Checkpoint, PolicyNet)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg = RunConfig::from_json(&ckpt.config_json)?;
    cfg.validate()?;
    let mut policy = build_policy(&cfg, ckpt.seed)?;
    load_params(&mut policy, &ckpt.params, path)?;
    Ok((cfg, ckpt, policy))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn snapshot(cfg: &RunConfig, seed: u64, t: &Trainer<InsertionEnv>) -> Checkpoint {
    Checkpoint {
        config_json: cfg.to_json(),
        seed,
        iteration: t.iteration,
        env_steps: t.env_steps,
        params: param_records(&t.policy),
        optim: t.optim.clone(),
        rng: RngState::capture(&t.rng),
        episode_counters: t.episode_counters(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn eval_policy(cfg: &RunConfig, policy: &PolicyNet, run_seed: u64, episodes: usize, threads: usize) -> Result<EvalReport> {
    let mut envs = build_envs(cfg, cfg.ppo.num_envs)?;
    let outcomes = evaluate(policy, &mut envs, run_seed, episodes, &cfg.symmetry, threads)?;
    EvalReport::new(run_seed, outcomes)
}

pub struct TrainOptions {
    pub threads: usize,
    /// Continue each seed from `seed_{s}/checkpoint.bin`.
    pub resume: bool,
    /// Called after every iteration.
    pub progress: Option<Box<dyn FnMut(u64, &IterationStats)>>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { threads: 1, resume: false, progress: None }
    }
}

/// Trains and evaluates one seed, writing `metrics.csv`, `checkpoint.bin`
/// and `eval.json` under `seed_{seed}/`.
pub fn train_seed(cfg: &RunConfig, seed: u64, opts: &mut TrainOptions) -> Result<SeedSummary> {
    let dir = seed_dir(&cfg.out_dir, seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ckpt_path = dir.join("checkpoint.bin");
    let metrics_path = dir.join("metrics.csv");

    let tcfg = TrainerConfig { ppo: cfg.ppo.clone(), lambda_sym: cfg.lambda_sym, symmetry: cfg.symmetry.clone(), seed, threads: opts.threads };
    let mut trainer = Trainer::new(tcfg, build_envs(cfg, cfg.ppo.num_envs)?, build_policy(cfg, seed)?)?;
    let mut log = if opts.resume && ckpt_path.exists() {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        if ckpt.seed != seed {
            return Err(Error::Checkpoint { path: ckpt_path, msg: format!("belongs to seed {}, not {seed}", ckpt.seed) });
        }
        load_params(&mut trainer.policy, &ckpt.params, &ckpt_path)?;
        trainer.optim = ckpt.optim.clone();
        trainer.rng = ckpt.rng.restore();
        trainer.iteration = ckpt.iteration;
        trainer.env_steps = ckpt.env_steps;
        trainer.restart_episodes(&ckpt.episode_counters)?;
        MetricsLog::resume(&metrics_path, ckpt.iteration)?
    } else {
        MetricsLog::create(&metrics_path)?
    };

    let rollout = (cfg.ppo.horizon * cfg.ppo.num_envs) as u64;
    while trainer.env_steps + rollout <= cfg.total_steps {
        let stats = match trainer.iterate() {
            Ok(s) => s,
            Err(Error::Numerical { msg, .. }) => {
                let dump = dir.join("divergence.bin");
                snapshot(cfg, seed, &trainer).save(&dump)?;
                return Err(Error::Numerical { msg: format!("seed {seed}: {msg}"), dump: Some(dump) });
            }
            Err(e) => return Err(e),
        };
        log.append(&MetricsRow::new(seed, &stats))?;
        if let Some(f) = opts.progress.as_mut() {
            f(seed, &stats);
        }
        if cfg.checkpoint_every > 0 && trainer.iteration % cfg.checkpoint_every == 0 {
            snapshot(cfg, seed, &trainer).save(&ckpt_path)?;
        }
    }
    snapshot(cfg, seed, &trainer).save(&ckpt_path)?;

    let report = eval_policy(cfg, &trainer.policy, seed, cfg.eval_episodes, opts.threads)?;
    write_json(&dir.join("eval.json"), &report)?;
    Ok(SeedSummary {
        seed,
        iterations: trainer.iteration,
        env_steps: trainer.env_steps,
        success_rate: report.success_rate,
        mean_steps_to_succeed: report.mean_steps_to_succeed,
    })
}

/// Runs every seed of `cfg` and writes `summary.json` to `cfg.out_dir`.
pub fn train(cfg: &RunConfig, opts: &mut TrainOptions) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_json(&cfg.out_dir.join("config.json"), cfg)?;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        seeds.push(train_seed(cfg, seed, opts)?);
    }
    let rates: Vec<f64> = seeds.iter().map(|s| s.success_rate).collect();
    let (mean, std) = mean_std(&rates);
    let summary = RunSummary {
        mode: cfg.mode.name().to_string(),
        fusion: cfg.fusion.map(|f| f.name().to_string()),
        lambda_sym: cfg.lambda_sym,
        total_steps: cfg.total_steps,
        eval_episodes: cfg.eval_episodes,
        seeds,
        success_rate_mean: mean,
        success_rate_std: std,
    };
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_json(path, value)
}

