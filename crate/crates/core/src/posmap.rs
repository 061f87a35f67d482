//! Key/query position assignment for merged neighbor + grouped attention.
//!
//! Keys are encoded at their group index, `Gk[p] = F[p]`. Queries outside the
//! neighbor window are shifted so the first grouped distance is exactly the
//! window width: `Gq[p] = W + F[p - W]` for `p >= W`. Below the window the
//! query index is never read by grouped attention; it is pinned to `p`.
//!
//! A pair `(i, j)` with `i - j < W` uses its exact distance; every other pair
//! uses `Gq[i] - Gk[j]`. Under that rule `rel_pos(i, i - W) = W` holds for
//! every row without special-casing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{GroupIndexMap, GroupingFunction};
use crate::par;

/// Grouped key and query positions for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "AssignmentWire", try_from = "AssignmentWire")]
pub struct PositionAssignment {
    window: usize,
    train_len: usize,
    key_pos: Vec<usize>,
    query_pos: Vec<usize>,
    map: GroupIndexMap,
}

fn check_window(window: usize, train_len: usize) -> Result<()> {
    if window >= train_len {
        return Err(Error::WindowExceedsTrainLength { window, train_len });
    }
    Ok(())
}

/// Builds `Gk` and `Gq` for a sequence of `n` tokens.
pub fn assign_positions(
    n: usize,
    window: usize,
    train_len: usize,
    function: &GroupingFunction,
) -> Result<PositionAssignment> {
    check_window(window, train_len)?;
    let map = function.build_map_parallel(n);
    let key_pos = map.entries().to_vec();
    let mut query_pos = vec![0usize; n];
    const BLOCK: usize = 1 << 14;
    let entries = map.entries();
    par::for_each_chunk_mut(&mut query_pos, BLOCK, |block, chunk| {
        let base = block * BLOCK;
        for (offset, slot) in chunk.iter_mut().enumerate() {
            let p = base + offset;
            *slot = if p >= window {
                window + entries[p - window]
            } else {
                p
            };
        }
    });
    Ok(PositionAssignment {
        window,
        train_len,
        key_pos,
        query_pos,
        map,
    })
}

impl PositionAssignment {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn train_len(&self) -> usize {
        self.train_len
    }

    pub fn key_pos(&self) -> &[usize] {
        &self.key_pos
    }

    pub fn query_pos(&self) -> &[usize] {
        &self.query_pos
    }

    pub fn map(&self) -> &GroupIndexMap {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.key_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_pos.is_empty()
    }

    /// Relative position used between query `i` and key `j`.
    pub fn rel_pos(&self, i: usize, j: usize) -> Result<usize> {
        if i >= self.len() {
            return Err(Error::OutOfRange {
                position: i,
                len: self.len(),
            });
        }
        if j > i {
            return Err(Error::CausalityViolation { query: i, key: j });
        }
        Ok(self.rel_pos_unchecked(i, j))
    }

    /// Whether the pair is handled by neighbor attention.
    #[inline]
    pub fn is_neighbor(&self, i: usize, j: usize) -> bool {
        i - j < self.window
    }

    /// `rel_pos` for `j <= i < n`, without bounds checks beyond slice indexing.
    #[inline]
    pub fn rel_pos_unchecked(&self, i: usize, j: usize) -> usize {
        if self.is_neighbor(i, j) {
            i - j
        } else {
            self.query_pos[i] - self.key_pos[j]
        }
    }

    /// Row `i` of the relative-position matrix, keys `0..=i`.
    pub fn rel_pos_row(&self, i: usize) -> Vec<usize> {
        (0..=i).map(|j| self.rel_pos_unchecked(i, j)).collect()
    }

    /// Lower-triangular relative-position matrix, computed row-parallel.
    pub fn rel_pos_matrix(&self) -> Vec<Vec<usize>> {
        par::map_range(self.len(), |i| self.rel_pos_row(i))
    }

    /// Largest relative position over all causal pairs, `None` when empty.
    ///
    /// Per row the maximum sits at key 0 on the grouped branch, or at the far
    /// edge of the window on the neighbor branch.
    pub fn max_rel_pos(&self) -> Option<usize> {
        (0..self.len())
            .map(|i| {
                let neighbor = i.min(self.window.saturating_sub(1));
                if i >= self.window {
                    neighbor.max(self.query_pos[i] - self.key_pos[0])
                } else {
                    neighbor
                }
            })
            .max()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("assignment serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Largest `n` whose relative positions all stay within `0..train_len`.
///
/// The binding pair is the last query against key 0, at distance
/// `W + F[n - 1 - W]`. It stays below `train_len` while the first
/// `train_len - W` groups cover the tokens past the window, so
/// `n = W + sum_{j < train_len - W} f(j)`.
pub fn max_context_length(
    train_len: usize,
    window: usize,
    function: &GroupingFunction,
) -> Result<usize> {
    check_window(window, train_len)?;
    let grouped: usize = (0..train_len - window)
        .map(|j| function.size_of_group(j))
        .fold(0usize, usize::saturating_add);
    Ok(window.saturating_add(grouped))
}

/// Operational capacity next to the textbook `L'` expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CapacityReport {
    /// [`max_context_length`].
    pub simulated: usize,
    /// `sum_{i=1}^{L + max(F) - W - F_W} f(i)`.
    pub literal_formula: usize,
    /// `literal_formula - simulated`.
    pub difference: i64,
}

/// Evaluates the textbook `L'` sum for documentation.
///
/// `max(F)` and `F_W` are read from the map built at the operational
/// capacity. `F_W` is the W-th entry counting from one (`F[W - 1]`), taken as
/// 0 when `W = 0`. Never used by any computation path.
pub fn literal_capacity_report(
    train_len: usize,
    window: usize,
    function: &GroupingFunction,
) -> Result<CapacityReport> {
    let simulated = max_context_length(train_len, window, function)?;
    let map = function.build_map_parallel(simulated);
    let max_group = map.max_group().unwrap_or(0);
    let f_w = if window == 0 {
        0
    } else {
        map.entries()[window - 1]
    };
    let upper = (train_len + max_group).saturating_sub(window + f_w);
    let literal_formula = (1..=upper)
        .map(|i| function.size_of_group(i))
        .fold(0usize, usize::saturating_add);
    Ok(CapacityReport {
        simulated,
        literal_formula,
        difference: literal_formula as i64 - simulated as i64,
    })
}

#[derive(Serialize, Deserialize)]
struct AssignmentWire {
    #[serde(rename = "W")]
    window: usize,
    #[serde(rename = "L")]
    train_len: usize,
    key_pos: Vec<usize>,
    query_pos: Vec<usize>,
    grouping: GroupIndexMap,
}

impl From<PositionAssignment> for AssignmentWire {
    fn from(a: PositionAssignment) -> Self {
        AssignmentWire {
            window: a.window,
            train_len: a.train_len,
            key_pos: a.key_pos,
            query_pos: a.query_pos,
            grouping: a.map,
        }
    }
}

impl TryFrom<AssignmentWire> for PositionAssignment {
    type Error = Error;

    fn try_from(wire: AssignmentWire) -> Result<Self> {
        let rebuilt = assign_positions(
            wire.grouping.len(),
            wire.window,
            wire.train_len,
            wire.grouping.source(),
        )?;
        if rebuilt.key_pos != wire.key_pos || rebuilt.query_pos != wire.query_pos {
            return Err(Error::Shape(
                "key/query positions do not match the embedded grouping".into(),
            ));
        }
        Ok(rebuilt)
    }
}
