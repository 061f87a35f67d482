//! Seeded toy decoder used to push merged attention through a full forward
//! pass and read out next-token negative log-likelihoods.
//!
//! Each layer is pre-norm attention followed by a pre-norm ReLU feed-forward
//! block of width `4 * model_dim`, both residual. Normalization is a
//! parameter-free RMS norm. The input is shifted right behind token id 0, so
//! a sequence of `n` tokens yields `n` likelihoods and its first token is
//! scored from the start token alone.
//!
//! Weight file layout (little-endian): `b"SELF"`, version `u32`, vocab `u32`,
//! layers `u32`, heads `u32`, head_dim `u32`, seed `u64`, then every matrix in
//! declaration order as row-major `f64`: embedding `[vocab, d]`; per layer
//! `wq, wk, wv, wo [d, d]`, `ff_up [d, 4d]`, `ff_down [4d, d]`; `lm_head [d, vocab]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{merged_attention, vanilla_attention, AttentionBatch, RopeConfig};
use crate::error::{Error, Result};
use crate::posmap::PositionAssignment;

const MAGIC: &[u8; 4] = b"SELF";
const VERSION: u32 = 1;
const MAX_VOCAB: usize = 1024;
const MAX_LAYERS: usize = 2;
const MAX_HEADS: usize = 4;
const MAX_HEAD_DIM: usize = 64;
const FF_MULT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyDecoderConfig {
    pub vocab: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub seed: u64,
}

impl ToyDecoderConfig {
    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(1..=MAX_VOCAB).contains(&self.vocab) {
            return bad(format!(
                "vocab must be in 1..={MAX_VOCAB}, got {}",
                self.vocab
            ));
        }
        if !(1..=MAX_LAYERS).contains(&self.layers) {
            return bad(format!(
                "layers must be in 1..={MAX_LAYERS}, got {}",
                self.layers
            ));
        }
        if !(1..=MAX_HEADS).contains(&self.heads) {
            return bad(format!(
                "heads must be in 1..={MAX_HEADS}, got {}",
                self.heads
            ));
        }
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) || self.head_dim > MAX_HEAD_DIM {
            return bad(format!(
                "head_dim must be even and in 2..={MAX_HEAD_DIM}, got {}",
                self.head_dim
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerWeights {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    ff_up: Array2<f64>,
    ff_down: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoderWeights {
    config: ToyDecoderConfig,
    embedding: Array2<f64>,
    layers: Vec<LayerWeights>,
    lm_head: Array2<f64>,
}

/// Matrix shapes in file order.
fn shapes(config: &ToyDecoderConfig) -> Vec<(usize, usize)> {
    let d = config.model_dim();
    let ff = FF_MULT * d;
    let mut out = vec![(config.vocab, d)];
    for _ in 0..config.layers {
        out.extend([(d, d), (d, d), (d, d), (d, d), (d, ff), (ff, d)]);
    }
    out.push((d, config.vocab));
    out
}

impl ToyDecoderWeights {
    /// Gaussian weights scaled by `1/sqrt(fan_in)`, drawn from ChaCha8 seeded with `config.seed`.
    pub fn generate(config: ToyDecoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let matrices = shapes(&config)
            .into_iter()
            .enumerate()
            .map(|(idx, (rows, cols))| {
                // The embedding table is unit-scale; projections are fan-in scaled.
                let scale = if idx == 0 {
                    1.0
                } else {
                    1.0 / (rows as f64).sqrt()
                };
                Array2::from_shape_fn((rows, cols), |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
            })
            .collect();
        Ok(Self::assemble(config, matrices))
    }

    fn assemble(config: ToyDecoderConfig, matrices: Vec<Array2<f64>>) -> Self {
        let mut it = matrices.into_iter();
        let mut next = || it.next().expect("matrix count matches shapes()");
        let embedding = next();
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ff_up: next(),
                ff_down: next(),
            })
            .collect();
        let lm_head = next();
        Self {
            config,
            embedding,
            layers,
            lm_head,
        }
    }

    pub fn config(&self) -> &ToyDecoderConfig {
        &self.config
    }

    fn matrices(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.embedding];
        for l in &self.layers {
            out.extend([&l.wq, &l.wk, &l.wv, &l.wo, &l.ff_up, &l.ff_down]);
        }
        out.push(&self.lm_head);
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        w.write_all(MAGIC)?;
        for v in [VERSION as usize, c.vocab, c.layers, c.heads, c.head_dim] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&c.seed.to_le_bytes())?;
        for m in self.matrices() {
            for x in m.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::WeightsFormat("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::WeightsFormat("bad magic".into()));
        }
        let mut u32s = [0u32; 5];
        for v in &mut u32s {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)
                .map_err(|_| Error::WeightsFormat("truncated header".into()))?;
            *v = u32::from_le_bytes(buf);
        }
        let [version, vocab, layers, heads, head_dim] = u32s;
        if version != VERSION {
            return Err(Error::WeightsFormat(format!(
                "unsupported version {version}"
            )));
        }
        let mut seed = [0u8; 8];
        r.read_exact(&mut seed)
            .map_err(|_| Error::WeightsFormat("truncated header".into()))?;
        let config = ToyDecoderConfig {
            vocab: vocab as usize,
            layers: layers as usize,
            heads: heads as usize,
            head_dim: head_dim as usize,
            seed: u64::from_le_bytes(seed),
        };
        config.validate()?;
        let mut matrices = Vec::new();
        for (rows, cols) in shapes(&config) {
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::WeightsFormat("truncated weight data".into()))?;
                let x = f64::from_le_bytes(buf);
                if !x.is_finite() {
                    return Err(Error::WeightsFormat("non-finite weight".into()));
                }
                data.push(x);
            }
            matrices.push(Array2::from_shape_vec((rows, cols), data).expect("sized above"));
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::WeightsFormat(
                "trailing bytes after weight data".into(),
            ));
        }
        Ok(Self::assemble(config, matrices))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn rms_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + 1e-6).sqrt();
        row.mapv_inplace(|v| v * inv);
    }
    out
}

/// `[n, heads * head_dim]` → `[heads, n, head_dim]`.
fn split_heads(x: &Array2<f64>, heads: usize, head_dim: usize) -> Array3<f64> {
    let n = x.nrows();
    Array3::from_shape_fn((heads, n, head_dim), |(h, i, c)| x[[i, h * head_dim + c]])
}

fn merge_heads(x: &Array3<f64>) -> Array2<f64> {
    let (heads, n, head_dim) = x.dim();
    let mut out = Array2::zeros((n, heads * head_dim));
    for h in 0..heads {
        out.slice_mut(s![.., h * head_dim..(h + 1) * head_dim])
            .assign(&x.slice(s![h, .., ..]));
    }
    out
}

/// Per-position negative log-likelihood of `tokens` under the toy decoder.
///
/// With `assignment = None` every layer uses plain RoPE attention; otherwise
/// merged attention with the given positions, which must cover `tokens.len()`.
pub fn toy_forward(
    tokens: &[usize],
    weights: &ToyDecoderWeights,
    cfg: &RopeConfig,
    assignment: Option<&PositionAssignment>,
) -> Result<Vec<f64>> {
    let config = weights.config;
    if let Some(&id) = tokens.iter().find(|&&t| t >= config.vocab) {
        return Err(Error::OutOfVocabulary {
            id,
            vocab: config.vocab,
        });
    }
    if cfg.head_dim() != config.head_dim {
        return Err(Error::Dimension {
            expected: config.head_dim,
            actual: cfg.head_dim(),
        });
    }
    let n = tokens.len();
    let d = config.model_dim();
    let mut x = Array2::zeros((n, d));
    for (p, mut row) in x.rows_mut().into_iter().enumerate() {
        let input = if p == 0 { 0 } else { tokens[p - 1] };
        row.assign(&weights.embedding.row(input));
    }
    for layer in &weights.layers {
        let h = rms_norm(&x);
        let q = split_heads(&h.dot(&layer.wq), config.heads, config.head_dim);
        let k = split_heads(&h.dot(&layer.wk), config.heads, config.head_dim);
        let v = split_heads(&h.dot(&layer.wv), config.heads, config.head_dim);
        let batch = AttentionBatch::new(q, k, v)?;
        let attended = match assignment {
            Some(a) => merged_attention(&batch, cfg, a)?,
            None => vanilla_attention(&batch, cfg)?,
        };
        x = x + merge_heads(&attended).dot(&layer.wo);
        let h = rms_norm(&x);
        let hidden = h.dot(&layer.ff_up).mapv(|v| v.max(0.0));
        x = x + hidden.dot(&layer.ff_down);
    }
    let logits = rms_norm(&x).dot(&weights.lm_head);
    Ok(logits
        .rows()
        .into_iter()
        .zip(tokens)
        .map(|(row, &target)| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[target]
        })
        .collect())
}
