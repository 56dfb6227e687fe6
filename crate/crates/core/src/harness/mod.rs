//! Run configuration, checkpoints, the multi-seed runner, evaluation and
//! benchmarking behind the command-line tool.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod presets;
pub mod runner;

pub use bench::{bench, bench_interleaved, BenchReport};
pub use checkpoint::{Checkpoint, ParamRecord, RngState};
pub use config::RunConfig;
pub use presets::{find as find_preset, Preset, PRESETS};
pub use runner::{eval_policy, load_policy, read_metrics, train, train_seed, EvalReport, MetricsRow, RunSummary, SeedSummary, TrainOptions};
