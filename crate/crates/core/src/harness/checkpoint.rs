//! Self-describing little-endian checkpoint files.
//!
//! Layout: magic `SYMFCKPT`, format version (u32), the run config as JSON,
//! seed / iteration / env-step counters, named parameter records, Adam
//! state, the trainer's ChaCha8 stream position, per-environment episode
//! counters and a trailing end marker. Strings and arrays are prefixed with
//! a u64 length.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use symfuse_autograd::Tensor;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::ppo::Adam;

pub const MAGIC: &[u8; 8] = b"SYMFCKPT";
pub const VERSION: u32 = 1;
const END: &[u8; 4] = b"DONE";

#[derive(Clone, Debug, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub seed: u64,
    pub iteration: u64,
    pub env_steps: u64,
    pub params: Vec<ParamRecord>,
    pub optim: Adam,
    pub rng: RngState,
    pub episode_counters: Vec<u64>,
}

pub fn param_records(module: &dyn Module) -> Vec<ParamRecord> {
    module
        .named_params()
        .into_iter()
        .map(|(name, t)| ParamRecord { name, shape: t.shape().to_vec(), data: t.to_vec() })
        .collect()
}

/// Replaces the parameters of `module` with `records`, which must match it
/// name for name and shape for shape.
pub fn load_params(module: &mut dyn Module, records: &[ParamRecord], path: &Path) -> Result<()> {
    let ours = module.named_params();
    if ours.len() != records.len() {
        return Err(ckpt_err(path, format!("checkpoint holds {} parameters, the configured policy has {}", records.len(), ours.len())));
    }
    for ((name, t), rec) in ours.iter().zip(records) {
        if *name != rec.name || t.shape() != rec.shape.as_slice() {
            return Err(ckpt_err(
                path,
                format!("parameter mismatch: checkpoint has {} {:?}, policy expects {} {:?}", rec.name, rec.shape, name, t.shape()),
            ));
        }
    }
    let mut i = 0;
    let mut failure = None;
    module.visit_mut("", &mut |_, t| {
        let rec = &records[i];
        i += 1;
        match Tensor::param(rec.data.clone(), &rec.shape) {
            Ok(p) => *t = p,
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn ckpt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), msg: msg.into() }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.bytes(self.config_json.as_bytes());
        w.u64(self.seed);
        w.u64(self.iteration);
        w.u64(self.env_steps);
        w.u64(self.params.len() as u64);
        for p in &self.params {
            w.bytes(p.name.as_bytes());
            w.u64(p.shape.len() as u64);
            for &d in &p.shape {
                w.u64(d as u64);
            }
            w.f32s(&p.data);
        }
        let a = &self.optim;
        for x in [a.lr, a.beta1, a.beta2, a.eps] {
            w.f64(x);
        }
        w.u64(a.step);
        w.u64(a.m.len() as u64);
        for (m, v) in a.m.iter().zip(&a.v) {
            w.f32s(m);
            w.f32s(v);
        }
        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        w.u64(self.episode_counters.len() as u64);
        for &c in &self.episode_counters {
            w.u64(c);
        }
        w.0.extend_from_slice(END);
        w.0
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(ckpt_err(path, "not a checkpoint (bad magic bytes)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ckpt_err(path, format!("unsupported format version {version}; this build reads version {VERSION}")));
        }
        let config_json = r.string()?;
        let seed = r.u64()?;
        let iteration = r.u64()?;
        let env_steps = r.u64()?;
        let n = r.len()?;
        let mut params = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let data = r.f32s()?;
            if data.len() != shape.iter().product::<usize>() {
                return Err(ckpt_err(path, format!("parameter {name}: {} values for shape {shape:?}", data.len())));
            }
            params.push(ParamRecord { name, shape, data });
        }
        let mut optim = Adam::new(r.f64()?);
        optim.beta1 = r.f64()?;
        optim.beta2 = r.f64()?;
        optim.eps = r.f64()?;
        optim.step = r.u64()?;
        for _ in 0..r.len()? {
            optim.m.push(r.f32s()?);
            optim.v.push(r.f32s()?);
        }
        let seed_bytes: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let counters = (0..r.len()?).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if r.take(4)? != END {
            return Err(ckpt_err(path, "missing end marker"));
        }
        if r.pos != bytes.len() {
            return Err(ckpt_err(path, format!("{} trailing bytes after the end marker", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_json,
            seed,
            iteration,
            env_steps,
            params,
            optim,
            rng: RngState { seed: seed_bytes, stream, word_pos },
            episode_counters: counters,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("bin.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn f32s(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(ckpt_err(self.path, format!("truncated: needed {n} bytes at offset {}, file has {}", self.pos, self.buf.len())));
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// A length prefix, bounded by the bytes left so corrupt files fail fast.
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(ckpt_err(self.path, format!("truncated: length {n} at offset {} exceeds the file", self.pos - 8)));
        }
        Ok(n as usize)
    }
    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ckpt_err(self.path, "string field is not UTF-8"))
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| ckpt_err(self.path, "length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}
