//! Plain f64 re-derivations shared by test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symfuse_autograd::Tensor;
use symfuse_core::fusion::{AttentionBlock, AttentionParams, CmtConfig, CmtFusion};
use symfuse_core::nn::{Linear, Module};

pub fn randomize(m: &mut dyn Module, rng: &mut ChaCha8Rng) {
    m.visit_mut("", &mut |_, t| {
        let data = (0..t.numel()).map(|_| rng.random_range(-0.8f32..0.8)).collect();
        *t = Tensor::param(data, t.shape()).unwrap();
    });
}

pub fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    let data = rows.iter().flatten().map(|&x| x as f32).collect();
    Tensor::new(data, &[rows.len(), rows[0].len()]).unwrap()
}

pub fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&x| x as f64).collect()
}

pub fn apply_linear(l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = f64s(&l.weight);
    let n = l.inputs();
    (0..l.outputs())
        .map(|o| {
            let mut s: f64 = (0..n).map(|i| w[o * n + i] * x[i]).sum();
            if let Some(b) = &l.bias {
                s += b.data()[o] as f64;
            }
            s
        })
        .collect()
}

/// Attention by enumerating every (query, head, key) triple.
pub fn oracle_attention(p: &AttentionParams, queries: &[Vec<f64>], context: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = p.dim();
    let dh = d / p.heads;
    let q: Vec<Vec<f64>> = queries.iter().map(|x| apply_linear(&p.wq, x)).collect();
    let k: Vec<Vec<f64>> = context.iter().map(|x| apply_linear(&p.wk, x)).collect();
    let v: Vec<Vec<f64>> = context.iter().map(|x| apply_linear(&p.wv, x)).collect();
    q.iter()
        .map(|qi| {
            let mut out = vec![0.0; d];
            for h in 0..p.heads {
                let cols = h * dh..(h + 1) * dh;
                let scores: Vec<f64> =
                    k.iter().map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt()).collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exp.iter().sum();
                for (j, e) in exp.iter().enumerate() {
                    for c in cols.clone() {
                        out[c] += e / z * v[j][c];
                    }
                }
            }
            match &p.wo {
                Some(wo) => apply_linear(wo, &out),
                None => out,
            }
        })
        .collect()
}

pub fn oracle_block(b: &AttentionBlock, queries: &[Vec<f64>], context: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let att = oracle_attention(&b.attn, queries, context);
    let Some(norm) = &b.norm else { return att };
    let (g, beta) = (f64s(&norm.gamma), f64s(&norm.beta));
    queries
        .iter()
        .zip(att)
        .map(|(q, a)| {
            let x: Vec<f64> = q.iter().zip(&a).map(|(u, v)| u + v).collect();
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + norm.eps as f64).sqrt();
            x.iter().enumerate().map(|(i, u)| (u - mean) * inv * g[i] + beta[i]).collect()
        })
        .collect()
}

/// One batch row of the cross-modal transformer.
pub fn oracle_cmt(cmt: &CmtFusion, z_v: &[f64], h_l: &[f64], h_r: &[f64]) -> Vec<f64> {
    let e = cmt.embed();
    let tt = f64s(&cmt.token_type);
    let mut tokens = vec![
        h_l.iter().enumerate().map(|(i, x)| x + tt[i]).collect::<Vec<f64>>(),
        h_r.iter().enumerate().map(|(i, x)| x + tt[e + i]).collect::<Vec<f64>>(),
    ];
    for b in &cmt.self_blocks {
        tokens = oracle_block(b, &tokens, &tokens);
    }
    let z_t: Vec<f64> = (0..e).map(|i| (tokens[0][i] + tokens[1][i]) / 2.0).collect();
    let mut query = vec![z_v.to_vec()];
    for b in &cmt.cross_blocks {
        query = oracle_block(b, &query, &tokens);
    }
    query[0].iter().chain(&z_t).copied().collect()
}

/// Largest absolute deviation between `CmtFusion::forward` and the oracle
/// over `cases` random configurations and inputs.
pub fn cmt_worst_deviation(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let heads = [1, 2, 4][case as usize % 3];
        let cfg = CmtConfig {
            heads,
            self_layers: 1 + (case as usize / 3) % 2,
            cross_layers: 1 + (case as usize / 6) % 2,
            residual_norm: case % 5 != 0,
            output_proj: case % 7 != 0,
        };
        let (b, e) = (3, 8);
        let mut cmt = CmtFusion::new(&mut rng, e, &cfg).unwrap();
        randomize(&mut cmt, &mut rng);
        let (z_v, h_l, h_r) = (rand_matrix(&mut rng, b, e), rand_matrix(&mut rng, b, e), rand_matrix(&mut rng, b, e));
        let got = cmt.forward(&tensor(&z_v), &tensor(&h_l), &tensor(&h_r)).unwrap();
        assert_eq!(got.shape(), &[b, 2 * e]);
        for row in 0..b {
            let want = oracle_cmt(&cmt, &z_v[row], &h_l[row], &h_r[row]);
            for (i, w) in want.iter().enumerate() {
                let g = got.data()[row * 2 * e + i] as f64;
                worst = worst.max((g - w).abs());
            }
        }
    }
    worst
}

/// Advantages by explicit expansion `Σ_l (γλ)^l δ_{t+l}`, stopping after the
/// first terminal step.
pub fn gae_brute_force(r: &[f64], v: &[f64], done: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta = |k: usize| r[k] + if done[k] { 0.0 } else { gamma * v[k + 1] } - v[k];
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in t..n {
                let weight: f64 = (t..k).map(|_| gamma * lambda).product();
                total += weight * delta(k);
                if done[k] {
                    break;
                }
            }
            total
        })
        .collect()
}

/// Random trajectory with mixed done flags: rewards, bootstrapped values,
/// done flags, γ and λ.
pub fn random_trajectory(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, Vec<bool>, f64, f64) {
    let n = rng.random_range(1..=32);
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let done: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
    (r, v, done, rng.random_range(0.8..1.0), rng.random_range(0.0..=1.0))
}
