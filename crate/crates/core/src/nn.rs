//! Parameterized layers and named-parameter traversal.

use rand::Rng;
use symfuse_autograd::functional::{self, LstmParams};
use symfuse_autograd::Tensor;

use crate::error::Result;

/// Anything that owns trainable tensors.
///
/// Both traversals must visit parameters in the same, stable order: the
/// optimizer and the checkpoint format rely on it.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn zero_grad(&self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `±1/√fan_in`, as a trainable leaf.
pub fn init_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::param(data, shape).expect("shape matches")
}

pub fn param_zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape).requires_grad()
}

pub fn param_ones(shape: &[usize]) -> Tensor {
    Tensor::ones(shape).requires_grad()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, inputs: usize, outputs: usize, bias: bool) -> Self {
        Linear {
            weight: init_uniform(rng, &[outputs, inputs], inputs),
            bias: bias.then(|| init_uniform(rng, &[outputs], inputs)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.linear(&self.weight, self.bias.as_ref())?)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(rng: &mut impl Rng, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            kernel: init_uniform(rng, &[out_ch, in_ch, kernel, kernel], fan_in),
            bias: init_uniform(rng, &[out_ch], fan_in),
            stride,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv2d(&self.kernel, &self.bias, self.stride)?)
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        LayerNorm { gamma: param_ones(&[width]), beta: param_zeros(&[width]), eps: 1e-5 }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(functional::layer_norm(x, &self.gamma, &self.beta, self.eps)?)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Recurrent state of a stacked LSTM: one `(h, c)` pair per layer, each `[B, H]`.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

impl LstmState {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> Self {
        LstmState {
            h: vec![Tensor::zeros(&[batch, hidden]); layers],
            c: vec![Tensor::zeros(&[batch, hidden]); layers],
        }
    }

    pub fn detach(&self) -> Self {
        LstmState {
            h: self.h.iter().map(Tensor::detach).collect(),
            c: self.c.iter().map(Tensor::detach).collect(),
        }
    }

    /// Multiplies every state row by `mask` (`[B,1]`), zeroing rows where a new
    /// episode begins.
    pub fn masked(&self, mask: &Tensor) -> Result<Self> {
        Ok(LstmState {
            h: self.h.iter().map(|t| t.mul(mask)).collect::<std::result::Result<_, _>>()?,
            c: self.c.iter().map(|t| t.mul(mask)).collect::<std::result::Result<_, _>>()?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Lstm {
    pub layers: Vec<LstmParams>,
}

impl Lstm {
    pub fn new(rng: &mut impl Rng, inputs: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { inputs } else { hidden };
                LstmParams {
                    weight: init_uniform(rng, &[4 * hidden, fan_in + hidden], hidden),
                    bias: init_uniform(rng, &[4 * hidden], hidden),
                }
            })
            .collect();
        Lstm { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn initial_state(&self, batch: usize) -> LstmState {
        LstmState::zeros(self.layers.len(), batch, self.hidden())
    }

    /// One time step through every layer; returns the top-layer output.
    pub fn step(&self, x: &Tensor, state: &LstmState) -> Result<(Tensor, LstmState)> {
        let mut input = x.clone();
        let mut next = LstmState { h: Vec::with_capacity(self.layers.len()), c: Vec::with_capacity(self.layers.len()) };
        for (l, params) in self.layers.iter().enumerate() {
            let (h, c) = functional::lstm_step(&input, &state.h[l], &state.c[l], params)?;
            input = h.clone();
            next.h.push(h);
            next.c.push(c);
        }
        Ok((input, next))
    }
}

impl Module for Lstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (l, p) in self.layers.iter().enumerate() {
            f(&join(prefix, &format!("{l}.weight")), &p.weight);
            f(&join(prefix, &format!("{l}.bias")), &p.bias);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (l, p) in self.layers.iter_mut().enumerate() {
            f(&join(prefix, &format!("{l}.weight")), &mut p.weight);
            f(&join(prefix, &format!("{l}.bias")), &mut p.bias);
        }
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<M: Module> Module for Option<M> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(m) = self {
            m.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(m) = self {
            m.visit_mut(prefix, f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_param_names_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::new(&mut rng, 5, 3, true);
        let names: Vec<String> = l.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["weight", "bias"]);
        assert_eq!(l.num_params(), 18);
    }

    #[test]
    fn init_within_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = init_uniform(&mut rng, &[64, 16], 16);
        assert!(t.data().iter().all(|v| v.abs() <= 0.25));
        assert!(t.is_requires_grad());
    }

    #[test]
    fn lstm_names_are_prefixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = Lstm::new(&mut rng, 3, 4, 2);
        let names: Vec<String> = lstm.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["0.weight", "0.bias", "1.weight", "1.bias"]);
        let mut seen = Vec::new();
        let mut copy = lstm.clone();
        copy.visit_mut("rnn", &mut |n, _| seen.push(n.to_string()));
        assert_eq!(seen[0], "rnn.0.weight");
    }

    #[test]
    fn masked_state_zeroes_rows() {
        let s = LstmState {
            h: vec![Tensor::ones(&[2, 3])],
            c: vec![Tensor::ones(&[2, 3])],
        };
        let m = Tensor::new(vec![1.0, 0.0], &[2, 1]).unwrap();
        let out = s.masked(&m).unwrap();
        assert_eq!(out.h[0].data(), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }
}
