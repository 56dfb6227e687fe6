//! Vision/tactile fusion heads: concatenation, gated sum, and the cross-modal
//! transformer (tactile self-attention followed by vision-query
//! cross-attention).

use rand::Rng;
use serde::{Deserialize, Serialize};
use symfuse_autograd::Tensor;

use crate::error::{Error, Result};
use crate::nn::{join, param_zeros, LayerNorm, Linear, Module};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    Naive,
    Gated,
    Cmt,
}

impl FusionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Naive => "naive",
            FusionStrategy::Gated => "gated",
            FusionStrategy::Cmt => "cmt",
        }
    }

    /// Width of the fused code for embeddings of width `embed`.
    pub fn out_width(self, embed: usize) -> usize {
        match self {
            FusionStrategy::Naive => 3 * embed,
            FusionStrategy::Gated => embed,
            FusionStrategy::Cmt => 2 * embed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmtConfig {
    pub heads: usize,
    pub self_layers: usize,
    pub cross_layers: usize,
    /// Residual connection plus layer norm around each attention block.
    pub residual_norm: bool,
    /// Output projection after concatenating heads.
    pub output_proj: bool,
}

impl Default for CmtConfig {
    fn default() -> Self {
        CmtConfig { heads: 1, self_layers: 1, cross_layers: 1, residual_norm: true, output_proj: true }
    }
}

/// Multi-head scaled dot-product attention parameters over width `D`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Option<Linear>,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new(rng: &mut impl Rng, dim: usize, heads: usize, output_proj: bool) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config("fusion.cmt.heads", format!("{heads} heads do not divide width {dim}")));
        }
        Ok(AttentionParams {
            wq: Linear::new(rng, dim, dim, false),
            wk: Linear::new(rng, dim, dim, false),
            wv: Linear::new(rng, dim, dim, false),
            wo: output_proj.then(|| Linear::new(rng, dim, dim, true)),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.outputs()
    }
}

impl Module for AttentionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.wq.visit(&join(prefix, "wq"), f);
        self.wk.visit(&join(prefix, "wk"), f);
        self.wv.visit(&join(prefix, "wv"), f);
        self.wo.visit(&join(prefix, "wo"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.wq.visit_mut(&join(prefix, "wq"), f);
        self.wk.visit_mut(&join(prefix, "wk"), f);
        self.wv.visit_mut(&join(prefix, "wv"), f);
        self.wo.visit_mut(&join(prefix, "wo"), f);
    }
}

/// `[B,T,D]` → `[B·H,T,D/H]`.
fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let [b, t, d] = *x.shape() else { unreachable!("checked by caller") };
    let dh = d / heads;
    Ok(x.reshape(&[b, t, heads, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[b * heads, t, dh])?)
}

fn merge_heads(x: &Tensor, batch: usize, heads: usize) -> Result<Tensor> {
    let [_, t, dh] = *x.shape() else { unreachable!("produced by split_heads") };
    Ok(x.reshape(&[batch, heads, t, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[batch, t, heads * dh])?)
}

/// Attention weights `softmax(QKᵀ/√d_head)` as `[B·H, Tq, Tk]`, plus the
/// projected values split into heads.
pub fn attention_weights(query: &Tensor, key: &Tensor, value: &Tensor, p: &AttentionParams) -> Result<(Tensor, Tensor)> {
    let d = p.dim();
    let (q_ok, k_ok, v_ok) = (
        query.rank() == 3 && query.shape()[2] == d,
        key.rank() == 3 && key.shape()[2] == d,
        value.rank() == 3 && value.shape() == key.shape(),
    );
    if !(q_ok && k_ok && v_ok) || query.shape()[0] != key.shape()[0] {
        return Err(Error::Tensor(symfuse_autograd::TensorError::ShapeMismatch {
            op: "attention",
            lhs: query.shape().to_vec(),
            rhs: key.shape().to_vec(),
        }));
    }
    let q = split_heads(&p.wq.forward(query)?, p.heads)?;
    let k = split_heads(&p.wk.forward(key)?, p.heads)?;
    let v = split_heads(&p.wv.forward(value)?, p.heads)?;
    let scale = 1.0 / ((d / p.heads) as f32).sqrt();
    let weights = q.matmul(&k.t()?)?.mul_scalar(scale).softmax(-1)?;
    Ok((weights, v))
}

/// `query [B,Tq,D]`, `key`/`value [B,Tk,D]` → `[B,Tq,D]`.
pub fn attention(query: &Tensor, key: &Tensor, value: &Tensor, p: &AttentionParams) -> Result<Tensor> {
    let (weights, v) = attention_weights(query, key, value, p)?;
    let heads = merge_heads(&weights.matmul(&v)?, query.shape()[0], p.heads)?;
    match &p.wo {
        Some(wo) => wo.forward(&heads),
        None => Ok(heads),
    }
}

fn check_widths(z_v: &Tensor, h_l: &Tensor, h_r: &Tensor, embed: usize) -> Result<()> {
    for t in [z_v, h_l, h_r] {
        if t.rank() != 2 || t.shape()[1] != embed || t.shape()[0] != z_v.shape()[0] {
            return Err(Error::Tensor(symfuse_autograd::TensorError::ShapeMismatch {
                op: "fusion",
                lhs: vec![z_v.shape()[0], embed],
                rhs: t.shape().to_vec(),
            }));
        }
    }
    Ok(())
}

/// `[vision, left, right]` concatenated along features.
pub fn fuse_naive(z_v: &Tensor, h_l: &Tensor, h_r: &Tensor) -> Result<Tensor> {
    check_widths(z_v, h_l, h_r, z_v.shape().get(1).copied().unwrap_or(0))?;
    Ok(Tensor::concat(&[z_v.clone(), h_l.clone(), h_r.clone()], 1)?)
}

/// Per-modality sigmoid gates from one linear map of the concatenated codes.
#[derive(Clone, Debug)]
pub struct GatedFusion {
    /// `3E → 3E`; output slices are the vision, left and right gates.
    pub gate: Linear,
}

impl GatedFusion {
    pub fn new(rng: &mut impl Rng, embed: usize) -> Self {
        GatedFusion { gate: Linear::new(rng, 3 * embed, 3 * embed, true) }
    }

    pub fn embed(&self) -> usize {
        self.gate.inputs() / 3
    }

    pub fn forward(&self, z_v: &Tensor, h_l: &Tensor, h_r: &Tensor) -> Result<Tensor> {
        let e = self.embed();
        check_widths(z_v, h_l, h_r, e)?;
        let gates = self.gate.forward(&Tensor::concat(&[z_v.clone(), h_l.clone(), h_r.clone()], 1)?)?.sigmoid();
        let mut out = gates.narrow(1, 0, e)?.mul(z_v)?;
        out = out.add(&gates.narrow(1, e, e)?.mul(h_l)?)?;
        out = out.add(&gates.narrow(1, 2 * e, e)?.mul(h_r)?)?;
        Ok(out)
    }
}

impl Module for GatedFusion {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.gate.visit(&join(prefix, "gate"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.gate.visit_mut(&join(prefix, "gate"), f);
    }
}

/// One attention block with optional residual + layer norm.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attn: AttentionParams,
    pub norm: Option<LayerNorm>,
}

impl AttentionBlock {
    fn new(rng: &mut impl Rng, dim: usize, cfg: &CmtConfig) -> Result<Self> {
        Ok(AttentionBlock {
            attn: AttentionParams::new(rng, dim, cfg.heads, cfg.output_proj)?,
            norm: cfg.residual_norm.then(|| LayerNorm::new(dim)),
        })
    }

    pub fn forward(&self, query: &Tensor, context: &Tensor) -> Result<Tensor> {
        let out = attention(query, context, context, &self.attn)?;
        match &self.norm {
            Some(norm) => norm.forward(&query.add(&out)?),
            None => Ok(out),
        }
    }
}

impl Module for AttentionBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

/// Intermediate codes of the cross-modal transformer.
#[derive(Clone, Debug)]
pub struct CmtTrace {
    /// Attended tactile tokens `[B,2,E]`.
    pub tokens: Tensor,
    /// Pooled tactile code `[B,E]`.
    pub z_t: Tensor,
    /// Vision-queried cross-attention code `[B,E]`.
    pub z_vt: Tensor,
    /// `concat(z_vt, z_t)`, `[B,2E]`.
    pub fused: Tensor,
}

#[derive(Clone, Debug)]
pub struct CmtFusion {
    /// Learned token-type embeddings for the left and right finger, `[2,E]`.
    pub token_type: Tensor,
    pub self_blocks: Vec<AttentionBlock>,
    pub cross_blocks: Vec<AttentionBlock>,
}

impl CmtFusion {
    pub fn new(rng: &mut impl Rng, embed: usize, cfg: &CmtConfig) -> Result<Self> {
        if cfg.self_layers == 0 || cfg.cross_layers == 0 {
            return Err(Error::config("fusion.cmt", "need at least one self and one cross attention layer"));
        }
        let self_blocks = (0..cfg.self_layers).map(|_| AttentionBlock::new(rng, embed, cfg)).collect::<Result<_>>()?;
        let cross_blocks = (0..cfg.cross_layers).map(|_| AttentionBlock::new(rng, embed, cfg)).collect::<Result<_>>()?;
        Ok(CmtFusion { token_type: param_zeros(&[2, embed]), self_blocks, cross_blocks })
    }

    pub fn embed(&self) -> usize {
        self.token_type.shape()[1]
    }

    /// Tactile self-attention over `{h_l, h_r}`; returns tokens `[B,2,E]`.
    pub fn self_attend(&self, h_l: &Tensor, h_r: &Tensor) -> Result<Tensor> {
        let e = self.embed();
        let b = h_l.shape()[0];
        let left = h_l.add(&self.token_type.narrow(0, 0, 1)?)?.reshape(&[b, 1, e])?;
        let right = h_r.add(&self.token_type.narrow(0, 1, 1)?)?.reshape(&[b, 1, e])?;
        let mut tokens = Tensor::concat(&[left, right], 1)?;
        for block in &self.self_blocks {
            tokens = block.forward(&tokens, &tokens)?;
        }
        Ok(tokens)
    }

    pub fn forward_trace(&self, z_v: &Tensor, h_l: &Tensor, h_r: &Tensor) -> Result<CmtTrace> {
        let e = self.embed();
        check_widths(z_v, h_l, h_r, e)?;
        let b = z_v.shape()[0];
        let tokens = self.self_attend(h_l, h_r)?;
        let z_t = tokens.mean_axis(1, false)?;
        let mut query = z_v.reshape(&[b, 1, e])?;
        for block in &self.cross_blocks {
            query = block.forward(&query, &tokens)?;
        }
        let z_vt = query.reshape(&[b, e])?;
        let fused = Tensor::concat(&[z_vt.clone(), z_t.clone()], 1)?;
        Ok(CmtTrace { tokens, z_t, z_vt, fused })
    }

    pub fn forward(&self, z_v: &Tensor, h_l: &Tensor, h_r: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(z_v, h_l, h_r)?.fused)
    }
}

impl Module for CmtFusion {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "token_type"), &self.token_type);
        self.self_blocks.visit(&join(prefix, "self"), f);
        self.cross_blocks.visit(&join(prefix, "cross"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "token_type"), &mut self.token_type);
        self.self_blocks.visit_mut(&join(prefix, "self"), f);
        self.cross_blocks.visit_mut(&join(prefix, "cross"), f);
    }
}

/// A fusion head behind one interface.
#[derive(Clone, Debug)]
pub enum FusionHead {
    Naive { embed: usize },
    Gated(GatedFusion),
    Cmt(CmtFusion),
}

impl FusionHead {
    pub fn new(rng: &mut impl Rng, strategy: FusionStrategy, embed: usize, cmt: &CmtConfig) -> Result<Self> {
        Ok(match strategy {
            FusionStrategy::Naive => FusionHead::Naive { embed },
            FusionStrategy::Gated => FusionHead::Gated(GatedFusion::new(rng, embed)),
            FusionStrategy::Cmt => FusionHead::Cmt(CmtFusion::new(rng, embed, cmt)?),
        })
    }

    pub fn strategy(&self) -> FusionStrategy {
        match self {
            FusionHead::Naive { .. } => FusionStrategy::Naive,
            FusionHead::Gated(_) => FusionStrategy::Gated,
            FusionHead::Cmt(_) => FusionStrategy::Cmt,
        }
    }

    pub fn out_width(&self) -> usize {
        let embed = match self {
            FusionHead::Naive { embed } => *embed,
            FusionHead::Gated(g) => g.embed(),
            FusionHead::Cmt(c) => c.embed(),
        };
        self.strategy().out_width(embed)
    }

    pub fn forward(&self, z_v: &Tensor, h_l: &Tensor, h_r: &Tensor) -> Result<Tensor> {
        match self {
            FusionHead::Naive { embed } => {
                check_widths(z_v, h_l, h_r, *embed)?;
                fuse_naive(z_v, h_l, h_r)
            }
            FusionHead::Gated(g) => g.forward(z_v, h_l, h_r),
            FusionHead::Cmt(c) => c.forward(z_v, h_l, h_r),
        }
    }
}

impl Module for FusionHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            FusionHead::Naive { .. } => {}
            FusionHead::Gated(g) => g.visit(prefix, f),
            FusionHead::Cmt(c) => c.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            FusionHead::Naive { .. } => {}
            FusionHead::Gated(g) => g.visit_mut(prefix, f),
            FusionHead::Cmt(c) => c.visit_mut(prefix, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn widths_per_strategy() {
        assert_eq!(FusionStrategy::Naive.out_width(128), 384);
        assert_eq!(FusionStrategy::Gated.out_width(128), 128);
        assert_eq!(FusionStrategy::Cmt.out_width(128), 256);
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(AttentionParams::new(&mut rng, 10, 3, true).is_err());
        assert!(AttentionParams::new(&mut rng, 12, 3, true).is_ok());
    }

    #[test]
    fn naive_rejects_wrong_width() {
        let a = Tensor::zeros(&[1, 4]);
        let b = Tensor::zeros(&[1, 3]);
        assert!(fuse_naive(&a, &a, &b).is_err());
    }
}
