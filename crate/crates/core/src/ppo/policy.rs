use rand::Rng;
use serde::{Deserialize, Serialize};
use symfuse_autograd::Tensor;

use crate::encoders::{ConvEncoder, Profile, TactileEncoders};
use crate::env::{ObsSpec, Observation, ACTION_DIM};
use crate::error::{Error, Result};
use crate::fusion::{CmtConfig, FusionHead, FusionStrategy};
use crate::nn::{join, Linear, Lstm, LstmState, Module};
use crate::ppo::loss::{clamp_log_std, PolicyOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub profile: Profile,
    /// Required exactly when the observation carries both image and tactile.
    pub fusion: Option<FusionStrategy>,
    pub cmt: CmtConfig,
    /// One tactile encoder for both fingers.
    pub shared_tactile: bool,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub mlp: Vec<usize>,
    /// Initial bias of the log-std head.
    pub init_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            profile: Profile::Full,
            fusion: None,
            cmt: CmtConfig::default(),
            shared_tactile: true,
            rnn_hidden: 256,
            rnn_layers: 2,
            mlp: vec![256, 128, 64],
            init_log_std: -0.5,
        }
    }
}

/// Observations for `N` samples stacked into tensors.
#[derive(Clone, Debug)]
pub struct ObsBatch {
    /// `[N, D]`.
    pub vector: Tensor,
    /// `[N, 3, S, S]`.
    pub image: Option<Tensor>,
    /// Left and right fields, each `[N, 3, T, T]`.
    pub tactile: Option<(Tensor, Tensor)>,
}

impl ObsBatch {
    pub fn len(&self) -> usize {
        self.vector.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_observations(obs: &[&Observation], spec: &ObsSpec) -> Result<Self> {
        let n = obs.len();
        let bad = |what: &str| Error::Env(format!("observation {what} does not match the spec {spec:?}"));
        let mut vector = Vec::with_capacity(n * spec.vector_dim);
        for o in obs {
            if o.vector.len() != spec.vector_dim {
                return Err(bad("vector"));
            }
            vector.extend_from_slice(&o.vector);
        }
        let vector = Tensor::new(vector, &[n, spec.vector_dim])?;
        let image = match spec.image {
            None => None,
            Some(shape) => {
                let per: usize = shape.iter().product();
                let mut data = Vec::with_capacity(n * per);
                for o in obs {
                    match &o.image {
                        Some(img) if img.len() == per => data.extend_from_slice(img),
                        _ => return Err(bad("image")),
                    }
                }
                Some(Tensor::new(data, &[n, shape[0], shape[1], shape[2]])?)
            }
        };
        let tactile = match spec.tactile {
            None => None,
            Some(shape) => {
                let per: usize = shape.iter().product();
                let (mut l, mut r) = (Vec::with_capacity(n * per), Vec::with_capacity(n * per));
                for o in obs {
                    match &o.tactile {
                        Some([a, b]) if a.len() == per && b.len() == per => {
                            l.extend_from_slice(a);
                            r.extend_from_slice(b);
                        }
                        _ => return Err(bad("tactile")),
                    }
                }
                let dims = [n, shape[0], shape[1], shape[2]];
                Some((Tensor::new(l, &dims)?, Tensor::new(r, &dims)?))
            }
        };
        Ok(ObsBatch { vector, image, tactile })
    }
}

/// Encoders, optional fusion head, stacked LSTM, ELU MLP trunk, and the
/// mean, log-std and value heads.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub spec: ObsSpec,
    pub config: PolicyConfig,
    pub sigma_bounds: (f64, f64),
    pub vision: Option<ConvEncoder>,
    pub tactile: Option<TactileEncoders>,
    pub fusion: Option<FusionHead>,
    pub rnn: Lstm,
    pub mlp: Vec<Linear>,
    pub mean_head: Linear,
    pub log_std_head: Linear,
    pub value_head: Linear,
}

fn check_input(field: &str, got: [usize; 3], want: [usize; 3]) -> Result<()> {
    if got != want {
        return Err(Error::config(field, format!("observation shape {got:?} does not match encoder input {want:?}")));
    }
    Ok(())
}

impl PolicyNet {
    pub fn new(rng: &mut impl Rng, spec: ObsSpec, config: &PolicyConfig, sigma_bounds: (f64, f64)) -> Result<Self> {
        if config.rnn_hidden == 0 || config.rnn_layers == 0 {
            return Err(Error::config("policy.rnn_hidden", "recurrent core needs at least one layer and unit"));
        }
        if config.mlp.contains(&0) {
            return Err(Error::config("policy.mlp", "layer widths must be positive"));
        }
        let both = spec.image.is_some() && spec.tactile.is_some();
        match (both, config.fusion) {
            (true, None) => return Err(Error::config("fusion", "a fusion strategy is required when both vision and touch are observed")),
            (false, Some(_)) => return Err(Error::config("fusion", "a fusion strategy is only valid when both vision and touch are observed")),
            _ => {}
        }
        let vision = match spec.image {
            Some(shape) => {
                let s = config.profile.vision();
                check_input("env.image_size", shape, s.input_shape())?;
                Some(ConvEncoder::new(rng, s)?)
            }
            None => None,
        };
        let tactile = match spec.tactile {
            Some(shape) => {
                let s = config.profile.tactile();
                check_input("env.tactile_size", shape, s.input_shape())?;
                Some(TactileEncoders::new(rng, s, config.shared_tactile)?)
            }
            None => None,
        };
        let fusion = match (config.fusion, &vision, &tactile) {
            (Some(strategy), Some(v), Some(t)) => {
                if v.embed_dim() != t.embed_dim() {
                    return Err(Error::config("policy.profile", "vision and tactile embeddings must share a width for fusion"));
                }
                Some(FusionHead::new(rng, strategy, v.embed_dim(), &config.cmt)?)
            }
            _ => None,
        };
        let encoded = match (&fusion, &vision, &tactile) {
            (Some(f), _, _) => f.out_width(),
            (None, Some(v), None) => v.embed_dim(),
            (None, None, Some(t)) => 2 * t.embed_dim(),
            _ => 0,
        };
        let rnn = Lstm::new(rng, encoded + spec.vector_dim, config.rnn_hidden, config.rnn_layers);
        let mut width = config.rnn_hidden;
        let mut mlp = Vec::with_capacity(config.mlp.len());
        for &w in &config.mlp {
            mlp.push(Linear::new(rng, width, w, true));
            width = w;
        }
        let mut mean_head = Linear::new(rng, width, ACTION_DIM, true);
        mean_head.weight = Tensor::param(mean_head.weight.data().iter().map(|w| w * 0.01).collect(), mean_head.weight.shape())?;
        mean_head.bias = Some(Tensor::zeros(&[ACTION_DIM]).requires_grad());
        let mut log_std_head = Linear::new(rng, width, ACTION_DIM, true);
        log_std_head.weight = Tensor::param(log_std_head.weight.data().iter().map(|w| w * 0.01).collect(), log_std_head.weight.shape())?;
        log_std_head.bias = Some(Tensor::full(&[ACTION_DIM], config.init_log_std as f32).requires_grad());
        let value_head = Linear::new(rng, width, 1, true);
        Ok(PolicyNet {
            spec,
            config: config.clone(),
            sigma_bounds,
            vision,
            tactile,
            fusion,
            rnn,
            mlp,
            mean_head,
            log_std_head,
            value_head,
        })
    }

    /// Per-sample input of the recurrent core, `[N, F]`.
    pub fn features(&self, obs: &ObsBatch) -> Result<Tensor> {
        let z_v = match (&self.vision, &obs.image) {
            (Some(enc), Some(img)) => Some(enc.forward(img)?),
            (None, None) => None,
            _ => return Err(Error::Env("image presence does not match the policy".into())),
        };
        let h = match (&self.tactile, &obs.tactile) {
            (Some(enc), Some((l, r))) => Some((enc.left().forward(l)?, enc.right().forward(r)?)),
            (None, None) => None,
            _ => return Err(Error::Env("tactile presence does not match the policy".into())),
        };
        let encoded = match (&self.fusion, z_v, h) {
            (Some(f), Some(z_v), Some((h_l, h_r))) => Some(f.forward(&z_v, &h_l, &h_r)?),
            (None, Some(z_v), None) => Some(z_v),
            (None, None, Some((h_l, h_r))) => Some(Tensor::concat(&[h_l, h_r], 1)?),
            (None, None, None) => None,
            _ => return Err(Error::Env("observation does not match the fusion layout".into())),
        };
        Ok(match encoded {
            Some(e) => Tensor::concat(&[e, obs.vector.clone()], 1)?,
            None => obs.vector.clone(),
        })
    }

    /// MLP trunk and heads over recurrent outputs `[N, H]`.
    pub fn heads(&self, core: &Tensor) -> Result<PolicyOutput> {
        let mut x = core.clone();
        for layer in &self.mlp {
            x = layer.forward(&x)?.elu();
        }
        let mean = self.mean_head.forward(&x)?;
        let log_std = clamp_log_std(&self.log_std_head.forward(&x)?, self.sigma_bounds.0, self.sigma_bounds.1)?;
        let n = x.shape()[0];
        let value = self.value_head.forward(&x)?.reshape(&[n])?;
        Ok(PolicyOutput { mean, log_std, value })
    }

    pub fn initial_state(&self, batch: usize) -> LstmState {
        self.rnn.initial_state(batch)
    }

    /// One control step for a batch of environments.
    pub fn act(&self, obs: &ObsBatch, state: &LstmState) -> Result<(PolicyOutput, LstmState)> {
        let feat = self.features(obs)?;
        let (core, next) = self.rnn.step(&feat, state)?;
        Ok((self.heads(&core)?, next))
    }

    /// Unrolls `T` steps for `B` sequences. `obs` rows are time-major
    /// (`t·B + b`); `masks[t][b]` is 0 where an episode starts at step `t`,
    /// resetting the carried state. Outputs are time-major as well.
    pub fn unroll(&self, obs: &ObsBatch, start: &LstmState, masks: &[Vec<f32>]) -> Result<PolicyOutput> {
        let t_len = masks.len();
        let n = obs.len();
        if t_len == 0 || !n.is_multiple_of(t_len) {
            return Err(Error::Env(format!("{n} samples cannot be split into {t_len} steps")));
        }
        let b = n / t_len;
        let feat = self.features(obs)?;
        let mut state = start.clone();
        let mut outputs = Vec::with_capacity(t_len);
        for (t, mask) in masks.iter().enumerate() {
            if mask.len() != b {
                return Err(Error::Env(format!("mask {t} has {} entries for {b} sequences", mask.len())));
            }
            if mask.iter().any(|&m| m != 1.0) {
                state = state.masked(&Tensor::new(mask.clone(), &[b, 1])?)?;
            }
            let (out, next) = self.rnn.step(&feat.narrow(0, t * b, b)?, &state)?;
            outputs.push(out);
            state = next;
        }
        self.heads(&Tensor::concat(&outputs, 0)?)
    }
}

impl Module for PolicyNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.vision.visit(&join(prefix, "vision"), f);
        self.tactile.visit(&join(prefix, "tactile"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
        self.rnn.visit(&join(prefix, "rnn"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
        self.mean_head.visit(&join(prefix, "mean"), f);
        self.log_std_head.visit(&join(prefix, "log_std"), f);
        self.value_head.visit(&join(prefix, "value"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.vision.visit_mut(&join(prefix, "vision"), f);
        self.tactile.visit_mut(&join(prefix, "tactile"), f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
        self.rnn.visit_mut(&join(prefix, "rnn"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
        self.mean_head.visit_mut(&join(prefix, "mean"), f);
        self.log_std_head.visit_mut(&join(prefix, "log_std"), f);
        self.value_head.visit_mut(&join(prefix, "value"), f);
    }
}
