//! Causal RoPE attention, plain and with merged neighbor/grouped positions.
//!
//! Merged attention builds two logit sets per head. Neighbor logits rotate
//! query `i` and key `j` to their exact positions; grouped logits rotate them
//! to `Gq[i]` and `Gk[j]`. Each pair takes the neighbor logit when
//! `i - j < W` and the grouped one otherwise, and the merged row goes through
//! a single causal softmax.

mod rope;
pub mod toy;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::par;
use crate::posmap::{max_context_length, PositionAssignment};

pub use rope::{rope_encode, RopeConfig, DEFAULT_BASE};
pub use toy::{toy_forward, ToyDecoderConfig, ToyDecoderWeights};

/// Query, key and value tensors of shape `[heads, n, head_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBatch {
    queries: Array3<f64>,
    keys: Array3<f64>,
    values: Array3<f64>,
}

impl AttentionBatch {
    pub fn new(queries: Array3<f64>, keys: Array3<f64>, values: Array3<f64>) -> Result<Self> {
        if queries.dim() != keys.dim() || queries.dim() != values.dim() {
            return Err(Error::Shape(format!(
                "queries {:?}, keys {:?} and values {:?} must share one shape",
                queries.dim(),
                keys.dim(),
                values.dim()
            )));
        }
        for (name, t) in [("queries", &queries), ("keys", &keys), ("values", &values)] {
            if !t.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        Ok(Self {
            queries,
            keys,
            values,
        })
    }

    pub fn heads(&self) -> usize {
        self.queries.dim().0
    }

    pub fn len(&self) -> usize {
        self.queries.dim().1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head_dim(&self) -> usize {
        self.queries.dim().2
    }

    /// `1 / sqrt(head_dim)`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }

    pub fn queries(&self) -> &Array3<f64> {
        &self.queries
    }

    pub fn keys(&self) -> &Array3<f64> {
        &self.keys
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    fn check_rope(&self, cfg: &RopeConfig) -> Result<()> {
        if cfg.head_dim() != self.head_dim() {
            return Err(Error::Dimension {
                expected: cfg.head_dim(),
                actual: self.head_dim(),
            });
        }
        Ok(())
    }
}

/// Rows of `x` rotated to `positions[row]`.
fn rotate_rows(
    x: ArrayView2<f64>,
    positions: impl Fn(usize) -> usize,
    cfg: &RopeConfig,
) -> Array2<f64> {
    let mut out = x.to_owned();
    for (row, mut v) in out.axis_iter_mut(Axis(0)).enumerate() {
        cfg.rotate_in_place(
            v.as_slice_mut().expect("owned rows are contiguous"),
            positions(row),
        );
    }
    out
}

fn masked_logits<F>(batch: &AttentionBatch, per_head: F) -> Array3<f64>
where
    F: Fn(usize) -> Array2<f64> + Send + Sync,
{
    let n = batch.len();
    let heads = par::map_range(batch.heads(), per_head);
    let mut out = Array3::from_elem((batch.heads(), n, n), f64::NEG_INFINITY);
    for (h, logits) in heads.into_iter().enumerate() {
        out.slice_mut(s![h, .., ..]).assign(&logits);
    }
    out
}

/// Pre-softmax logits with exact positions; entries with `j > i` are `-inf`.
pub fn vanilla_logits(batch: &AttentionBatch, cfg: &RopeConfig) -> Result<Array3<f64>> {
    batch.check_rope(cfg)?;
    let (n, scale) = (batch.len(), batch.scale());
    Ok(masked_logits(batch, |h| {
        let q = rotate_rows(batch.queries.slice(s![h, .., ..]), |i| i, cfg);
        let k = rotate_rows(batch.keys.slice(s![h, .., ..]), |j| j, cfg);
        let mut logits = Array2::from_elem((n, n), f64::NEG_INFINITY);
        for i in 0..n {
            for j in 0..=i {
                logits[[i, j]] =
                    rope::dot(q.row(i).as_slice().unwrap(), k.row(j).as_slice().unwrap()) * scale;
            }
        }
        logits
    }))
}

/// Pre-softmax logits with neighbor/grouped selection; `j > i` are `-inf`.
pub fn merged_logits(
    batch: &AttentionBatch,
    cfg: &RopeConfig,
    assignment: &PositionAssignment,
) -> Result<Array3<f64>> {
    batch.check_rope(cfg)?;
    if assignment.len() != batch.len() {
        return Err(Error::Shape(format!(
            "assignment covers {} positions but the batch has {}",
            assignment.len(),
            batch.len()
        )));
    }
    if cfg!(debug_assertions) {
        let capacity = max_context_length(
            assignment.train_len(),
            assignment.window(),
            assignment.map().source(),
        )?;
        if batch.len() <= capacity {
            if let Some(max) = assignment.max_rel_pos() {
                assert!(
                    max < assignment.train_len(),
                    "relative position {max} exceeds the trained range"
                );
            }
        }
    }
    let (n, scale) = (batch.len(), batch.scale());
    let (gq, gk) = (assignment.query_pos(), assignment.key_pos());
    Ok(masked_logits(batch, |h| {
        let queries = batch.queries.slice(s![h, .., ..]);
        let keys = batch.keys.slice(s![h, .., ..]);
        let q_exact = rotate_rows(queries, |i| i, cfg);
        let k_exact = rotate_rows(keys, |j| j, cfg);
        let q_group = rotate_rows(queries, |i| gq[i], cfg);
        let k_group = rotate_rows(keys, |j| gk[j], cfg);
        let mut logits = Array2::from_elem((n, n), f64::NEG_INFINITY);
        for i in 0..n {
            for j in 0..=i {
                let (q, k) = if assignment.is_neighbor(i, j) {
                    (&q_exact, &k_exact)
                } else {
                    (&q_group, &k_group)
                };
                logits[[i, j]] =
                    rope::dot(q.row(i).as_slice().unwrap(), k.row(j).as_slice().unwrap()) * scale;
            }
        }
        logits
    }))
}

/// Row-wise causal softmax of `[heads, n, n]` logits. Masked entries become exactly 0.
pub fn causal_softmax(logits: &Array3<f64>) -> Array3<f64> {
    let mut weights = logits.clone();
    for mut head in weights.outer_iter_mut() {
        for (i, mut row) in head.outer_iter_mut().enumerate() {
            let max = row
                .iter()
                .take(i + 1)
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (j, w) in row.iter_mut().enumerate() {
                if j <= i {
                    *w = (*w - max).exp();
                    total += *w;
                } else {
                    *w = 0.0;
                }
            }
            row.iter_mut().take(i + 1).for_each(|w| *w /= total);
        }
    }
    weights
}

fn mix_values(weights: &Array3<f64>, values: &Array3<f64>) -> Array3<f64> {
    let (heads, n, d) = values.dim();
    let mut out = Array3::zeros((heads, n, d));
    for h in 0..heads {
        for i in 0..n {
            for j in 0..=i {
                let w = weights[[h, i, j]];
                for c in 0..d {
                    out[[h, i, c]] += w * values[[h, j, c]];
                }
            }
        }
    }
    out
}

/// Standard causal attention with queries and keys at their exact positions.
pub fn vanilla_attention(batch: &AttentionBatch, cfg: &RopeConfig) -> Result<Array3<f64>> {
    let weights = causal_softmax(&vanilla_logits(batch, cfg)?);
    Ok(mix_values(&weights, &batch.values))
}

/// Causal attention with neighbor/grouped position selection.
pub fn merged_attention(
    batch: &AttentionBatch,
    cfg: &RopeConfig,
    assignment: &PositionAssignment,
) -> Result<Array3<f64>> {
    let weights = causal_softmax(&merged_logits(batch, cfg, assignment)?);
    Ok(mix_values(&weights, &batch.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::GroupingFunction;
    use crate::posmap::assign_positions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(seed: u64, heads: usize, n: usize, d: usize) -> AttentionBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = || Array3::from_shape_fn((heads, n, d), |_| rng.gen_range(-1.0..1.0));
        let (q, k, v) = (gen(), gen(), gen());
        AttentionBatch::new(q, k, v).unwrap()
    }

    /// Independent double loop: rotate, dot, softmax, mix, one row at a time.
    fn quadratic_reference(batch: &AttentionBatch, cfg: &RopeConfig) -> Array3<f64> {
        let (heads, n, d) = batch.queries().dim();
        let mut out = Array3::zeros((heads, n, d));
        for h in 0..heads {
            for i in 0..n {
                let q: Vec<f64> = batch.queries().slice(s![h, i, ..]).to_vec();
                let q = rope_encode(&q, i, cfg).unwrap();
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        let k: Vec<f64> = batch.keys().slice(s![h, j, ..]).to_vec();
                        let k = rope_encode(&k, j, cfg).unwrap();
                        q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    for c in 0..d {
                        out[[h, i, c]] += e / z * batch.values()[[h, j, c]];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_token_returns_its_value() {
        let batch = random_batch(1, 2, 1, 4);
        let cfg = RopeConfig::new(DEFAULT_BASE, 4).unwrap();
        let out = vanilla_attention(&batch, &cfg).unwrap();
        assert_eq!(out, *batch.values());
    }

    #[test]
    fn zero_queries_give_running_mean() {
        let base = random_batch(2, 2, 6, 4);
        let batch = AttentionBatch::new(
            Array3::zeros((2, 6, 4)),
            base.keys().clone(),
            base.values().clone(),
        )
        .unwrap();
        let cfg = RopeConfig::new(DEFAULT_BASE, 4).unwrap();
        let out = vanilla_attention(&batch, &cfg).unwrap();
        for h in 0..2 {
            for i in 0..6 {
                for c in 0..4 {
                    let mean: f64 =
                        (0..=i).map(|j| batch.values()[[h, j, c]]).sum::<f64>() / (i + 1) as f64;
                    assert!((out[[h, i, c]] - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn vanilla_matches_quadratic_reference() {
        let batch = random_batch(3, 3, 8, 8);
        let cfg = RopeConfig::new(DEFAULT_BASE, 8).unwrap();
        let out = vanilla_attention(&batch, &cfg).unwrap();
        let reference = quadratic_reference(&batch, &cfg);
        for (a, b) in out.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_rows_are_stochastic() {
        let batch = random_batch(4, 2, 10, 4);
        let cfg = RopeConfig::new(DEFAULT_BASE, 4).unwrap();
        let w = causal_softmax(&vanilla_logits(&batch, &cfg).unwrap());
        for h in 0..2 {
            for i in 0..10 {
                let sum: f64 = (0..10).map(|j| w[[h, i, j]]).sum();
                assert!((sum - 1.0).abs() < 1e-9);
                for j in i + 1..10 {
                    assert_eq!(w[[h, i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn wide_window_equals_vanilla_exactly() {
        let batch = random_batch(5, 2, 12, 8);
        let cfg = RopeConfig::new(DEFAULT_BASE, 8).unwrap();
        let f = GroupingFunction::logistic(16, 0.5).unwrap();
        let a = assign_positions(12, 12, 13, &f).unwrap();
        assert_eq!(
            merged_attention(&batch, &cfg, &a).unwrap(),
            vanilla_attention(&batch, &cfg).unwrap()
        );
    }

    #[test]
    fn identity_grouping_equals_vanilla() {
        let batch = random_batch(6, 2, 12, 8);
        let cfg = RopeConfig::new(DEFAULT_BASE, 8).unwrap();
        let f = GroupingFunction::constant(1).unwrap();
        let a = assign_positions(12, 3, 16, &f).unwrap();
        let merged = merged_attention(&batch, &cfg, &a).unwrap();
        let vanilla = vanilla_attention(&batch, &cfg).unwrap();
        for (x, y) in merged.iter().zip(vanilla.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn merged_logits_follow_relative_positions() {
        let batch = random_batch(7, 2, 12, 8);
        let cfg = RopeConfig::new(DEFAULT_BASE, 8).unwrap();
        let f = GroupingFunction::tabulated(vec![1, 2, 2, 3, 3]).unwrap();
        let a = assign_positions(12, 3, 64, &f).unwrap();
        let logits = merged_logits(&batch, &cfg, &a).unwrap();
        for h in 0..2 {
            for i in 0..12 {
                for j in 0..=i {
                    let q = batch.queries().slice(s![h, i, ..]).to_vec();
                    let k = batch.keys().slice(s![h, j, ..]).to_vec();
                    let rel = a.rel_pos(i, j).unwrap();
                    let expected =
                        rope::dot(&rope_encode(&q, rel, &cfg).unwrap(), &k) * batch.scale();
                    assert!((logits[[h, i, j]] - expected).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let cfg = RopeConfig::new(DEFAULT_BASE, 4).unwrap();
        let batch = random_batch(8, 1, 5, 4);
        let f = GroupingFunction::constant(2).unwrap();
        let a = assign_positions(6, 1, 4, &f).unwrap();
        assert!(matches!(
            merged_attention(&batch, &cfg, &a),
            Err(Error::Shape(_))
        ));
        let wrong_dim = RopeConfig::new(DEFAULT_BASE, 6).unwrap();
        assert!(matches!(
            vanilla_attention(&batch, &wrong_dim),
            Err(Error::Dimension { .. })
        ));
        let mut q = batch.queries().clone();
        q[[0, 2, 1]] = f64::NAN;
        assert!(matches!(
            AttentionBatch::new(q, batch.keys().clone(), batch.values().clone()),
            Err(Error::NonFinite("queries"))
        ));
        assert!(AttentionBatch::new(
            Array3::zeros((1, 5, 4)),
            Array3::zeros((1, 4, 4)),
            Array3::zeros((1, 5, 4))
        )
        .is_err());
    }
}
