//! Rotary position embedding in its real form: coordinate pairs
//! `(2d, 2d + 1)` are rotated by `m * theta_d`, `theta_d = b^(-2d/|D|)`.

use crate::error::{Error, Result};

pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RopeConfig {
    base: f64,
    head_dim: usize,
    angles: Vec<f64>,
}

impl RopeConfig {
    pub fn new(base: f64, head_dim: usize) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(Error::Dimension {
                expected: head_dim + head_dim % 2,
                actual: head_dim,
            });
        }
        if !(base.is_finite() && base > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rope base must be finite and greater than 1, got {base}"
            )));
        }
        let angles = (0..head_dim / 2)
            .map(|d| base.powf(-2.0 * d as f64 / head_dim as f64))
            .collect();
        Ok(Self {
            base,
            head_dim,
            angles,
        })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Per-pair angular frequencies `theta_d`.
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Rotates `v` in place to position `m`. `v.len()` must equal the head dimension.
    pub fn rotate_in_place(&self, v: &mut [f64], m: usize) {
        debug_assert_eq!(v.len(), self.head_dim);
        let m = m as f64;
        for (pair, &theta) in v.chunks_exact_mut(2).zip(&self.angles) {
            let (sin, cos) = (m * theta).sin_cos();
            let (x0, x1) = (pair[0], pair[1]);
            pair[0] = x0 * cos - x1 * sin;
            pair[1] = x0 * sin + x1 * cos;
        }
    }
}

/// `v` rotated to position `m`.
pub fn rope_encode(v: &[f64], m: usize, cfg: &RopeConfig) -> Result<Vec<f64>> {
    if v.len() != cfg.head_dim {
        return Err(Error::Dimension {
            expected: cfg.head_dim,
            actual: v.len(),
        });
    }
    let mut out = v.to_vec();
    cfg.rotate_in_place(&mut out, m);
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
