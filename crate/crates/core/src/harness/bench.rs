use std::time::Instant;

use serde::{Deserialize, Serialize};
use symfuse_autograd::{memory, no_grad};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::ppo::{ObsBatch, PolicyNet};

/// Inference timing of one policy at batch size 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub batch_size: usize,
    pub warmup: usize,
    pub passes: usize,
    pub latency_ms: f64,
    /// Forward passes per second, `1000 / latency_ms`.
    pub throughput_fps: f64,
    pub param_bytes: usize,
    /// High-water mark of tensor bytes allocated during one forward pass.
    pub peak_activation_bytes: usize,
    /// `(param_bytes + peak_activation_bytes) / 2^20`.
    pub memory_mb: f64,
}

fn forward(policy: &PolicyNet, obs: &Observation, state: &crate::nn::LstmState) -> Result<crate::nn::LstmState> {
    let batch = ObsBatch::from_observations(&[obs], &policy.spec)?;
    let (out, next) = policy.act(&batch, state)?;
    std::hint::black_box(out.mean.data());
    Ok(next)
}

/// Runs `warmup` untimed forwards, then times `passes` forwards on the
/// calling thread. Each pass builds its input batch and carries the
/// recurrent state, as a control loop would.
pub fn bench(label: &str, policy: &PolicyNet, obs: &Observation, warmup: usize, passes: usize) -> Result<BenchReport> {
    let mut reports = bench_interleaved(&[(label, policy, obs)], warmup, passes)?;
    Ok(reports.remove(0))
}

/// Benchmarks several policies under the same machine conditions: after each
/// policy's warmup, timed passes alternate between policies one forward at a
/// time, and each policy's latency is the mean of its own `passes` forwards.
pub fn bench_interleaved(entries: &[(&str, &PolicyNet, &Observation)], warmup: usize, passes: usize) -> Result<Vec<BenchReport>> {
    if passes == 0 {
        return Err(Error::config("passes", "must be at least 1"));
    }
    no_grad(|| {
        let mut states = Vec::with_capacity(entries.len());
        let mut peaks = Vec::with_capacity(entries.len());
        for &(_, policy, obs) in entries {
            let mut state = policy.initial_state(1);
            for _ in 0..warmup {
                state = forward(policy, obs, &state)?;
            }
            let baseline = memory::live_bytes();
            memory::reset_peak();
            let probe = forward(policy, obs, &state)?;
            peaks.push(memory::peak_bytes().saturating_sub(baseline));
            drop(probe);
            states.push(state);
        }

        let mut elapsed = vec![0.0f64; entries.len()];
        for _ in 0..passes {
            for (i, &(_, policy, obs)) in entries.iter().enumerate() {
                let started = Instant::now();
                states[i] = forward(policy, obs, &states[i])?;
                elapsed[i] += started.elapsed().as_secs_f64();
            }
        }

        Ok(entries
            .iter()
            .zip(elapsed.iter().zip(peaks))
            .map(|(&(label, policy, _), (&secs, peak_activation_bytes))| {
                let latency_ms = secs * 1e3 / passes as f64;
                let param_bytes = policy.num_params() * std::mem::size_of::<f32>();
                BenchReport {
                    label: label.to_string(),
                    batch_size: 1,
                    warmup,
                    passes,
                    latency_ms,
                    throughput_fps: 1000.0 / latency_ms,
                    param_bytes,
                    peak_activation_bytes,
                    memory_mb: (param_bytes + peak_activation_bytes) as f64 / (1024.0 * 1024.0),
                }
            })
            .collect())
    })
}
