use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use symfuse_autograd::{no_grad, Tensor};

use crate::env::{episode_seed, Environment, EpisodeOutcome, ObsSpec, Observation, ACTION_DIM};
use crate::error::{Error, Result};
use crate::nn::{LstmState, Module};
use crate::ppo::adam::{clip_grad_norm, Adam};
use crate::ppo::buffer::RolloutBuffer;
use crate::ppo::config::PpoConfig;
use crate::ppo::loss::{gaussian_log_prob, ppo_loss, LossBatch};
use crate::ppo::policy::{ObsBatch, PolicyNet};
use crate::sym_config::{CalibrationMode, SymmetryOptions};
#[cfg(feature = "symmetry")]
use crate::sym_config::SymmetrySpace;

/// Salt separating evaluation episode seeds from training ones.
pub const EVAL_SALT: u64 = 0x6576_616c_5f73_6565;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub ppo: PpoConfig,
    pub lambda_sym: f64,
    pub symmetry: SymmetryOptions,
    pub seed: u64,
    /// Worker threads for environment stepping.
    pub threads: usize,
}

/// Per-iteration summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
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

struct Slot {
    obs: Observation,
    episode: u64,
    seed: u64,
    ret: f64,
    steps: usize,
    /// The current observation is the first of its episode.
    fresh: bool,
    reference: Option<[Vec<f32>; 2]>,
}

fn apply_reference(obs: &mut Observation, reference: &Option<[Vec<f32>; 2]>) {
    if let (Some(fields), Some(refs)) = (obs.tactile.as_mut(), reference) {
        for (field, r) in fields.iter_mut().zip(refs) {
            field.iter_mut().zip(r).for_each(|(v, r)| *v -= r);
        }
    }
}

/// Resets `env` with `seed` and, for measured calibration, records the
/// per-taxel reference while holding still.
fn start_episode<E: Environment>(env: &mut E, seed: u64, sym: &SymmetryOptions) -> Result<(Observation, Option<[Vec<f32>; 2]>)> {
    let mut obs = env.reset(seed)?;
    let reference = match sym.calibration {
        CalibrationMode::Symmetric => None,
        CalibrationMode::Measured => measured_reference(env, sym.hold_steps)?,
    };
    apply_reference(&mut obs, &reference);
    Ok((obs, reference))
}

#[cfg(feature = "symmetry")]
fn measured_reference<E: Environment>(env: &mut E, hold_steps: usize) -> Result<Option<[Vec<f32>; 2]>> {
    match env.calibration_source() {
        Some(src) => {
            let r = crate::symmetry::calibrate(src, hold_steps)?;
            Ok(Some([r.left.to_vec(), r.right.to_vec()]))
        }
        None => Ok(None),
    }
}

#[cfg(not(feature = "symmetry"))]
fn measured_reference<E: Environment>(_env: &mut E, _hold_steps: usize) -> Result<Option<[Vec<f32>; 2]>> {
    Err(Error::config("symmetry.calibration", "measured calibration needs the `symmetry` feature"))
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))
}

/// Samples `μ + σ·ε` per row, drawing `ε` row-major from `rng`.
fn sample_actions(mean: &Tensor, log_std: &Tensor, rng: &mut ChaCha8Rng) -> Vec<[f32; ACTION_DIM]> {
    mean.data()
        .chunks_exact(ACTION_DIM)
        .zip(log_std.data().chunks_exact(ACTION_DIM))
        .map(|(m, s)| {
            let mut a = [0.0f32; ACTION_DIM];
            for d in 0..ACTION_DIM {
                let eps: f32 = rng.sample(StandardNormal);
                a[d] = m[d] + s[d].exp() * eps;
            }
            a
        })
        .collect()
}

pub fn check_spec(policy: &PolicyNet, spec: &ObsSpec) -> Result<()> {
    if policy.spec != *spec {
        return Err(Error::config("mode", format!("environment emits {spec:?} but the policy expects {:?}", policy.spec)));
    }
    Ok(())
}

/// Collects rollouts from a pool of environments and runs PPO updates.
pub struct Trainer<E: Environment> {
    pub cfg: TrainerConfig,
    pub policy: PolicyNet,
    pub optim: Adam,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
    pub env_steps: u64,
    envs: Vec<E>,
    slots: Vec<Slot>,
    state: LstmState,
    pool: rayon::ThreadPool,
}

impl<E: Environment> Trainer<E> {
    pub fn new(cfg: TrainerConfig, envs: Vec<E>, policy: PolicyNet) -> Result<Self> {
        cfg.ppo.validate()?;
        if !(cfg.lambda_sym >= 0.0 && cfg.lambda_sym.is_finite()) {
            return Err(Error::config("lambda_sym", format!("must be finite and >= 0, got {}", cfg.lambda_sym)));
        }
        if cfg.lambda_sym > 0.0 {
            if cfg!(not(feature = "symmetry")) {
                return Err(Error::config("lambda_sym", "this build has the symmetry regularizer compiled out"));
            }
            if policy.tactile.is_none() {
                return Err(Error::config("lambda_sym", "the symmetry loss needs tactile observations"));
            }
            if cfg.symmetry.space == crate::sym_config::SymmetrySpace::Attended
                && !matches!(policy.fusion, Some(crate::fusion::FusionHead::Cmt(_)))
            {
                return Err(Error::config("symmetry.space", "attended codes exist only with cmt fusion"));
            }
        }
        if envs.len() != cfg.ppo.num_envs {
            return Err(Error::config("ppo.num_envs", format!("{} environments supplied for num_envs {}", envs.len(), cfg.ppo.num_envs)));
        }
        for env in &envs {
            check_spec(&policy, &env.spec())?;
        }
        let pool = build_pool(cfg.threads)?;
        let optim = Adam::new(cfg.ppo.lr);
        let rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, u64::MAX, 0));
        let state = policy.initial_state(envs.len());
        let mut trainer = Trainer { cfg, policy, optim, rng, iteration: 0, env_steps: 0, envs, slots: Vec::new(), state, pool };
        let counters = vec![0; trainer.envs.len()];
        trainer.restart_episodes(&counters)?;
        Ok(trainer)
    }

    /// Next episode index of every environment.
    pub fn episode_counters(&self) -> Vec<u64> {
        self.slots.iter().map(|s| s.episode).collect()
    }

    /// Starts fresh episodes at the given indices and zeroes recurrent state.
    pub fn restart_episodes(&mut self, counters: &[u64]) -> Result<()> {
        if counters.len() != self.envs.len() {
            return Err(Error::config("episode_counters", format!("{} counters for {} environments", counters.len(), self.envs.len())));
        }
        let (run_seed, sym) = (self.cfg.seed, &self.cfg.symmetry);
        let started: Vec<Result<Slot>> = self.pool.install(|| {
            self.envs
                .par_iter_mut()
                .zip(counters.par_iter())
                .enumerate()
                .map(|(e, (env, &episode))| {
                    let seed = episode_seed(run_seed, e as u64, episode);
                    let (obs, reference) = start_episode(env, seed, sym)?;
                    Ok(Slot { obs, episode, seed, ret: 0.0, steps: 0, fresh: true, reference })
                })
                .collect()
        });
        self.slots = started.into_iter().collect::<Result<_>>()?;
        self.state = self.policy.initial_state(self.envs.len());
        Ok(())
    }

    fn collect(&mut self) -> Result<(RolloutBuffer, Vec<EpisodeOutcome>, [f64; 3])> {
        let ppo = &self.cfg.ppo;
        let e_len = self.envs.len();
        let mut buf = RolloutBuffer::new(ppo.horizon, e_len, ppo.bptt_len)?;
        let mut finished = Vec::new();
        let (mut sig_sum, mut sig_min, mut sig_max, mut sig_n) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY, 0usize);
        let spec = self.policy.spec;
        for t in 0..ppo.horizon {
            if t % ppo.bptt_len == 0 {
                buf.snapshots.push(self.state.clone());
            }
            let refs: Vec<&Observation> = self.slots.iter().map(|s| &s.obs).collect();
            let batch = ObsBatch::from_observations(&refs, &spec)?;
            let (out, next) = no_grad(|| self.policy.act(&batch, &self.state))?;
            let actions = sample_actions(&out.mean, &out.log_std, &mut self.rng);
            let flat: Vec<f32> = actions.iter().flatten().copied().collect();
            let log_probs = no_grad(|| gaussian_log_prob(&Tensor::new(flat, &[e_len, ACTION_DIM])?, &out.mean, &out.log_std))?;
            for s in out.log_std.data() {
                let sigma = (*s as f64).exp();
                sig_sum += sigma;
                sig_min = sig_min.min(sigma);
                sig_max = sig_max.max(sigma);
                sig_n += 1;
            }

            let (run_seed, sym) = (self.cfg.seed, &self.cfg.symmetry);
            let stepped: Vec<Result<(Observation, f32, bool, bool, Option<EpisodeOutcome>)>> = self.pool.install(|| {
                self.envs
                    .par_iter_mut()
                    .zip(self.slots.par_iter_mut())
                    .zip(actions.par_iter())
                    .enumerate()
                    .map(|(e, ((env, slot), action))| {
                        let r = env.step(action)?;
                        slot.ret += r.reward as f64;
                        slot.steps += 1;
                        let was_fresh = slot.fresh;
                        let mut outcome = None;
                        let mut obs = r.observation;
                        apply_reference(&mut obs, &slot.reference);
                        if r.done {
                            outcome = Some(EpisodeOutcome { seed: slot.seed, success: r.success, steps: slot.steps, episode_return: slot.ret });
                            slot.episode += 1;
                            slot.seed = episode_seed(run_seed, e as u64, slot.episode);
                            let (fresh_obs, reference) = start_episode(env, slot.seed, sym)?;
                            obs = fresh_obs;
                            slot.reference = reference;
                            slot.ret = 0.0;
                            slot.steps = 0;
                        }
                        slot.fresh = r.done;
                        let prev = std::mem::replace(&mut slot.obs, obs);
                        Ok((prev, r.reward, r.done, was_fresh, outcome))
                    })
                    .collect()
            });
            let mut mask = Vec::with_capacity(e_len);
            for (e, res) in stepped.into_iter().enumerate() {
                let (prev, reward, done, was_fresh, outcome) = res?;
                buf.observations.push(prev);
                buf.actions.push(actions[e]);
                buf.log_probs.push(log_probs.data()[e]);
                buf.values.push(out.value.data()[e]);
                buf.rewards.push(reward);
                buf.dones.push(done);
                buf.starts.push(was_fresh);
                mask.push(if done { 0.0 } else { 1.0 });
                finished.extend(outcome);
            }
            self.state = if mask.contains(&0.0) { next.masked(&Tensor::new(mask, &[e_len, 1])?)? } else { next };
            self.env_steps += e_len as u64;
        }
        let refs: Vec<&Observation> = self.slots.iter().map(|s| &s.obs).collect();
        let batch = ObsBatch::from_observations(&refs, &spec)?;
        let (out, _) = no_grad(|| self.policy.act(&batch, &self.state))?;
        buf.finish(out.value.data(), ppo.gamma, ppo.gae_lambda)?;
        let sigma = if sig_n > 0 { [sig_sum / sig_n as f64, sig_min, sig_max] } else { [f64::NAN; 3] };
        Ok((buf, finished, sigma))
    }

    #[cfg(feature = "symmetry")]
    fn regularize(&self, l_ppo: Tensor, batch: &ObsBatch) -> Result<(Tensor, Option<f64>)> {
        use crate::symmetry::{attended_symmetry_loss, combine_losses, symmetry_loss};
        if self.cfg.lambda_sym == 0.0 {
            return Ok((l_ppo, None));
        }
        let (Some(enc), Some((left, right))) = (&self.policy.tactile, &batch.tactile) else {
            return Err(Error::config("lambda_sym", "the symmetry loss needs tactile observations"));
        };
        let axis = self.cfg.symmetry.axis;
        let l_sym = match (self.cfg.symmetry.space, &self.policy.fusion) {
            (SymmetrySpace::Backbone, _) => symmetry_loss(left, right, enc, axis)?,
            (SymmetrySpace::Attended, Some(crate::fusion::FusionHead::Cmt(cmt))) => attended_symmetry_loss(left, right, enc, cmt, axis)?,
            (SymmetrySpace::Attended, _) => return Err(Error::config("symmetry.space", "attended codes exist only with cmt fusion")),
        };
        let value = l_sym.item() as f64;
        if !value.is_finite() {
            return Err(Error::Numerical { msg: format!("non-finite symmetry loss {value}"), dump: None });
        }
        Ok((combine_losses(&l_ppo, &l_sym, self.cfg.lambda_sym as f32)?, Some(value)))
    }

    #[cfg(not(feature = "symmetry"))]
    fn regularize(&self, l_ppo: Tensor, _batch: &ObsBatch) -> Result<(Tensor, Option<f64>)> {
        Ok((l_ppo, None))
    }

    /// One collect-and-update cycle.
    pub fn iterate(&mut self) -> Result<IterationStats> {
        let started = Instant::now();
        let (buf, finished, sigma) = self.collect()?;
        let mean_abs_adv = buf.advantages.iter().map(|a| a.abs() as f64).sum::<f64>() / buf.advantages.len() as f64;
        if !(mean_abs_adv <= self.cfg.ppo.divergence_threshold) {
            return Err(Error::Numerical {
                msg: format!("mean |advantage| {mean_abs_adv:.3e} exceeds {:.1e} at iteration {}", self.cfg.ppo.divergence_threshold, self.iteration + 1),
                dump: None,
            });
        }

        let ppo = self.cfg.ppo.clone();
        let spec = self.policy.spec;
        let per_mb = ppo.minibatch / ppo.bptt_len;
        let chunks_per_env = ppo.horizon / ppo.bptt_len;
        let mut order: Vec<(usize, usize)> = (0..buf.num_envs).flat_map(|e| (0..chunks_per_env).map(move |c| (e, c))).collect();
        let (mut l_ppo, mut l_sym, mut value, mut gn, mut clip, mut updates) = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
        let mut sym_seen = false;
        for _ in 0..ppo.epochs {
            order.shuffle(&mut self.rng);
            for group in order.chunks(per_mb) {
                let mb = buf.minibatch(group)?;
                let batch = ObsBatch::from_observations(&mb.observations, &spec)?;
                let out = self.policy.unroll(&batch, &mb.start, &mb.masks)?;
                let mut adv = mb.advantages.clone();
                if ppo.normalize_advantages {
                    let n = adv.len() as f64;
                    let mean = adv.iter().map(|&a| a as f64).sum::<f64>() / n;
                    let var = adv.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
                    let std = var.sqrt() + 1e-8;
                    adv.iter_mut().for_each(|a| *a = ((*a as f64 - mean) / std) as f32);
                }
                let n = adv.len();
                let lb = LossBatch { actions: mb.actions, old_log_prob: mb.old_log_prob, advantages: Tensor::new(adv, &[n])?, returns: mb.returns };
                let (loss, stats) = ppo_loss(&out, &lb, &ppo)?;
                let (loss, sym) = self.regularize(loss, &batch)?;
                self.policy.zero_grad();
                loss.backward()?;
                gn += clip_grad_norm(&self.policy, ppo.max_grad_norm)?;
                self.optim.update(&mut self.policy)?;
                l_ppo += stats.total as f64;
                value += stats.value as f64;
                clip += stats.clip_fraction as f64;
                if let Some(s) = sym {
                    l_sym += s;
                    sym_seen = true;
                }
                updates += 1;
            }
        }
        self.iteration += 1;
        let k = updates.max(1) as f64;
        let successes: Vec<&EpisodeOutcome> = finished.iter().filter(|o| o.success).collect();
        let n_ep = finished.len();
        Ok(IterationStats {
            iteration: self.iteration,
            env_steps: self.env_steps,
            episodes: n_ep,
            mean_return: (n_ep > 0).then(|| finished.iter().map(|o| o.episode_return).sum::<f64>() / n_ep as f64),
            success_rate: (n_ep > 0).then(|| successes.len() as f64 / n_ep as f64),
            mean_steps_to_succeed: (!successes.is_empty())
                .then(|| successes.iter().map(|o| o.steps as f64).sum::<f64>() / successes.len() as f64),
            l_ppo: l_ppo / k,
            l_sym: sym_seen.then(|| l_sym / k),
            value_loss: value / k,
            sigma_mean: sigma[0],
            sigma_min: sigma[1],
            sigma_max: sigma[2],
            grad_norm: gn / k,
            clip_fraction: clip / k,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    pub fn envs_mut(&mut self) -> &mut [E] {
        &mut self.envs
    }
}

/// Seed of evaluation episode `k`.
pub fn eval_episode_seed(run_seed: u64, k: u64) -> u64 {
    episode_seed(run_seed ^ EVAL_SALT, 0, k)
}

/// Deterministic (mean-action) rollouts of `episodes` episodes, run in
/// lockstep batches of `envs.len()`.
pub fn evaluate<E: Environment>(
    policy: &PolicyNet,
    envs: &mut [E],
    run_seed: u64,
    episodes: usize,
    sym: &SymmetryOptions,
    threads: usize,
) -> Result<Vec<EpisodeOutcome>> {
    if episodes == 0 {
        return Err(Error::config("episodes", "must be at least 1"));
    }
    if envs.is_empty() {
        return Err(Error::config("ppo.num_envs", "evaluation needs at least one environment"));
    }
    for env in envs.iter() {
        check_spec(policy, &env.spec())?;
    }
    let pool = build_pool(threads)?;
    let spec = policy.spec;
    let mut outcomes = Vec::with_capacity(episodes);
    let mut next = 0usize;
    while next < episodes {
        let b = (episodes - next).min(envs.len());
        let active_envs = &mut envs[..b];
        let seeds: Vec<u64> = (next..next + b).map(|k| eval_episode_seed(run_seed, k as u64)).collect();
        let started: Vec<Result<(Observation, Option<[Vec<f32>; 2]>)>> =
            pool.install(|| active_envs.par_iter_mut().zip(seeds.par_iter()).map(|(env, &s)| start_episode(env, s, sym)).collect());
        let mut slots: Vec<(Observation, Option<[Vec<f32>; 2]>)> = started.into_iter().collect::<Result<_>>()?;
        let mut live = vec![true; b];
        let mut results: Vec<Option<EpisodeOutcome>> = vec![None; b];
        let mut returns = vec![0.0f64; b];
        let mut steps = vec![0usize; b];
        let mut state = policy.initial_state(b);
        while live.iter().any(|&l| l) {
            let refs: Vec<&Observation> = slots.iter().map(|s| &s.0).collect();
            let batch = ObsBatch::from_observations(&refs, &spec)?;
            let (out, next_state) = no_grad(|| policy.act(&batch, &state))?;
            state = next_state;
            let means: Vec<&[f32]> = out.mean.data().chunks_exact(ACTION_DIM).collect();
            let stepped: Vec<Option<Result<(Observation, f32, bool, bool)>>> = pool.install(|| {
                active_envs
                    .par_iter_mut()
                    .zip(slots.par_iter())
                    .zip(live.par_iter())
                    .zip(means.par_iter())
                    .map(|(((env, slot), &alive), action)| {
                        alive.then(|| {
                            let r = env.step(action)?;
                            let mut obs = r.observation;
                            apply_reference(&mut obs, &slot.1);
                            Ok((obs, r.reward, r.done, r.success))
                        })
                    })
                    .collect()
            });
            for (i, res) in stepped.into_iter().enumerate() {
                let Some(res) = res else { continue };
                let (obs, reward, done, success) = res?;
                returns[i] += reward as f64;
                steps[i] += 1;
                slots[i].0 = obs;
                if done {
                    live[i] = false;
                    results[i] = Some(EpisodeOutcome { seed: seeds[i], success, steps: steps[i], episode_return: returns[i] });
                }
            }
        }
        outcomes.extend(results.into_iter().flatten());
        next += b;
    }
    Ok(outcomes)
}
