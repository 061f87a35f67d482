//! Group-size functions and the token → group-index map `F`.
//!
//! A [`GroupingFunction`] gives the number of tokens in each group, indexed
//! by group (0th group, 1st group, ...). Laying the groups end to end yields
//! the [`GroupIndexMap`]: `F[p]` is the group that token `p` belongs to.
//!
//! Two constructions are provided. [`GroupingFunction::build_map_sequential`]
//! appends groups one after another and serves as the reference.
//! [`GroupingFunction::build_map_parallel`] first splits the sequence into
//! size-class sections (all groups of size 1, then all groups of size 2, ...)
//! using the inverse of the size function, then fills each section from a
//! closed form with no dependency on any other section.
//!
//! Indexing
//!
//! Positions and group indices are 0-based everywhere in the public API.
//! The section arithmetic in [`SizeClassLayout::locate`] works on the 1-based
//! rank `i = p + 1` internally, with `S` the number of tokens in all smaller
//! size classes and `k + 1` the size of the section holding the token:
//!
//! ```text
//! F[p] = (first_group(k + 1) - 1) + ceil((i - S) / (k + 1))
//! ```
//!
//! Inverse
//!
//! `smallest_index_of_size(y)` returns the smallest group index whose size is
//! at least `y`. When every size is attained (group sizes never jump by more
//! than one) this is the smallest index whose size is exactly `y`. When the
//! function skips a size, that size class is simply empty.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Upper bound on the capacity (largest group size) of any grouping function.
pub const MAX_CAPACITY: usize = 1 << 24;

/// Group indices are searched up to 2^53, the last point where `f64` still
/// represents every integer. A size class that starts beyond it is treated as
/// starting exactly there, which no realistic sequence reaches.
pub const INDEX_HORIZON: usize = 1 << 53;

/// Group-size rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    /// `f(j) = floor(C e^{rj} / (C + e^{rj} - 1))`.
    Logistic { capacity: usize, growth_rate: f64 },
    /// Every group holds `size` tokens.
    Constant { size: usize },
    /// Explicit sizes; the last entry repeats forever.
    Tabulated { sizes: Vec<usize> },
}

/// A validated group-size function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FunctionWire", try_from = "FunctionWire")]
pub struct GroupingFunction {
    rule: Rule,
}

impl GroupingFunction {
    /// Logistic growth with capacity `C` and growth rate `r`.
    ///
    /// `C = 1` is normalized to `Constant(1)`, the identity grouping.
    pub fn logistic(capacity: usize, growth_rate: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidFunction("capacity must be at least 1".into()));
        }
        if capacity > MAX_CAPACITY {
            return Err(Error::InvalidFunction(format!(
                "capacity {capacity} exceeds the supported maximum {MAX_CAPACITY}"
            )));
        }
        if !(growth_rate.is_finite() && growth_rate > 0.0) {
            return Err(Error::InvalidFunction(format!(
                "growth rate must be positive and finite, got {growth_rate}"
            )));
        }
        if capacity == 1 {
            return Self::constant(1);
        }
        Ok(Self {
            rule: Rule::Logistic {
                capacity,
                growth_rate,
            },
        })
    }

    /// Constant group size `G`: the floor-based Self-Extend grouping `F[p] = p / G`.
    pub fn constant(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidFunction(
                "group size must be at least 1".into(),
            ));
        }
        if size > MAX_CAPACITY {
            return Err(Error::InvalidFunction(format!(
                "group size {size} exceeds the supported maximum {MAX_CAPACITY}"
            )));
        }
        Ok(Self {
            rule: Rule::Constant { size },
        })
    }

    /// Explicit nondecreasing list of positive sizes; the last one repeats.
    pub fn tabulated(sizes: Vec<usize>) -> Result<Self> {
        let Some(&last) = sizes.last() else {
            return Err(Error::InvalidFunction(
                "tabulated sizes must not be empty".into(),
            ));
        };
        if sizes.contains(&0) {
            return Err(Error::InvalidFunction(
                "tabulated sizes must be positive".into(),
            ));
        }
        if sizes.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidFunction(
                "tabulated sizes must be nondecreasing".into(),
            ));
        }
        if last > MAX_CAPACITY {
            return Err(Error::InvalidFunction(format!(
                "group size {last} exceeds the supported maximum {MAX_CAPACITY}"
            )));
        }
        Ok(Self {
            rule: Rule::Tabulated { sizes },
        })
    }

    pub fn rule(&self) -> &Rule {
        &self.rule
    }

    /// Largest group size the function ever produces.
    pub fn capacity(&self) -> usize {
        match &self.rule {
            Rule::Logistic { capacity, .. } => *capacity,
            Rule::Constant { size } => *size,
            Rule::Tabulated { sizes } => *sizes.last().expect("validated nonempty"),
        }
    }

    /// Number of tokens in group `j`.
    ///
    /// The logistic is evaluated as `C / (1 + (C - 1) e^{-rj})`. It is the same
    /// function, but every floating-point step is monotone, so the floored
    /// result is nondecreasing in `j`; the `e^{rj}` quotient is not once
    /// `e^{rj}` dwarfs `C`. Underflow of `e^{-rj}` yields `C` exactly.
    pub fn size_of_group(&self, j: usize) -> usize {
        match &self.rule {
            Rule::Logistic {
                capacity,
                growth_rate,
            } => {
                let c = *capacity as f64;
                let decay = (-growth_rate * j as f64).exp();
                let value = c / (1.0 + (c - 1.0) * decay);
                (value.floor() as usize).clamp(1, *capacity)
            }
            Rule::Constant { size } => *size,
            Rule::Tabulated { sizes } => *sizes
                .get(j)
                .unwrap_or(sizes.last().expect("validated nonempty")),
        }
    }

    /// Smallest group index `j` with `size_of_group(j) >= y`.
    pub fn smallest_index_of_size(&self, y: usize) -> Result<usize> {
        let capacity = self.capacity();
        if y == 0 || y > capacity {
            return Err(Error::InvalidSize { size: y, capacity });
        }
        Ok(match &self.rule {
            Rule::Constant { .. } => 0,
            Rule::Tabulated { sizes } => sizes.partition_point(|&s| s < y),
            Rule::Logistic {
                capacity,
                growth_rate,
            } => {
                if y == 1 {
                    0
                } else if y < *capacity {
                    let (c, y_f) = (*capacity as f64, y as f64);
                    let root = ((c * y_f - y_f).ln() - (c - y_f).ln()) / growth_rate;
                    self.first_index_reaching(y, seed_index(root.ceil()))
                } else {
                    // The closed form has ln(0) here; start from the previous class.
                    let previous = self.smallest_index_of_size(y - 1)?;
                    self.first_index_reaching(y, previous.max(1))
                }
            }
        })
    }

    /// Smallest `j` with `size_of_group(j) >= y`, searching outward from `seed`.
    ///
    /// Brackets the answer by stepping away from the seed with doubling
    /// strides, then bisects. An accurate seed resolves in two or three
    /// evaluations.
    fn first_index_reaching(&self, y: usize, seed: usize) -> usize {
        let reaches = |j: usize| self.size_of_group(j) >= y;
        let (mut lo, mut hi);
        if reaches(seed) {
            hi = seed;
            let mut stride = 1;
            loop {
                if hi == 0 {
                    return 0;
                }
                let probe = hi.saturating_sub(stride);
                if reaches(probe) {
                    hi = probe;
                    stride *= 2;
                } else {
                    lo = probe;
                    break;
                }
            }
        } else {
            lo = seed;
            let mut stride = 1;
            loop {
                if lo >= INDEX_HORIZON {
                    return INDEX_HORIZON;
                }
                let probe = lo.saturating_add(stride).min(INDEX_HORIZON);
                if reaches(probe) {
                    hi = probe;
                    break;
                }
                lo = probe;
                stride *= 2;
            }
        }
        // f(lo) < y <= f(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if reaches(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Number of token positions whose group has size exactly `x`.
    pub fn elements_in_size_class(&self, x: usize) -> Result<usize> {
        let capacity = self.capacity();
        if x == 0 {
            return Err(Error::InvalidSize { size: x, capacity });
        }
        if x >= capacity {
            return Err(Error::UnboundedClass { size: x, capacity });
        }
        let first = self.smallest_index_of_size(x)?;
        let next = self.smallest_index_of_size(x + 1)?;
        Ok(x.saturating_mul(next - first))
    }

    /// Partition of the token axis into size-class sections.
    pub fn layout(&self) -> SizeClassLayout {
        SizeClassLayout::new(self)
    }

    /// `F[p]` without materializing `F`. Costs one layout construction, O(C).
    pub fn locate(&self, p: usize) -> usize {
        self.layout().locate(p)
    }

    /// Reference construction: append `size_of_group(j)` copies of `j` until
    /// `n` entries exist.
    pub fn build_map_sequential(&self, n: usize) -> GroupIndexMap {
        let mut entries = Vec::with_capacity(n);
        let mut group = 0;
        while entries.len() < n {
            let take = self.size_of_group(group).min(n - entries.len());
            entries.extend(std::iter::repeat_n(group, take));
            group += 1;
        }
        GroupIndexMap {
            entries,
            source: self.clone(),
        }
    }

    /// Section-wise construction; bit-identical to [`Self::build_map_sequential`].
    pub fn build_map_parallel(&self, n: usize) -> GroupIndexMap {
        GroupIndexMap {
            entries: self.layout().fill(n),
            source: self.clone(),
        }
    }
}

impl fmt::Display for GroupingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rule {
            Rule::Logistic {
                capacity,
                growth_rate,
            } => write!(f, "logistic(C={capacity}, r={growth_rate})"),
            Rule::Constant { size } => write!(f, "constant(G={size})"),
            Rule::Tabulated { sizes } => {
                let sizes: Vec<String> = sizes.iter().map(usize::to_string).collect();
                write!(f, "tabulated({})", sizes.join("|"))
            }
        }
    }
}

fn seed_index(candidate: f64) -> usize {
    if candidate.is_nan() || candidate <= 0.0 {
        0
    } else if candidate >= INDEX_HORIZON as f64 {
        INDEX_HORIZON
    } else {
        candidate as usize
    }
}

/// A run of consecutive groups sharing one size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Section {
    /// Group size in this section.
    pub size: usize,
    /// Index of the first group in the section.
    pub first_group: usize,
    /// Position of the first token in the section.
    pub start: usize,
}

/// Nonempty size-class sections in token order. The final section has the
/// function's capacity as its size and extends without bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeClassLayout {
    sections: Vec<Section>,
}

impl SizeClassLayout {
    fn new(function: &GroupingFunction) -> Self {
        let capacity = function.capacity();
        let inverse = |y| {
            function
                .smallest_index_of_size(y)
                .expect("sizes 1..=capacity are valid")
        };
        let mut sections = Vec::new();
        let mut start = 0usize;
        let mut first = inverse(1);
        for size in 1..capacity {
            let next = inverse(size + 1);
            let count = size.saturating_mul(next - first);
            if count > 0 {
                sections.push(Section {
                    size,
                    first_group: first,
                    start,
                });
                start = start.saturating_add(count);
            }
            first = next;
        }
        sections.push(Section {
            size: capacity,
            first_group: first,
            start,
        });
        Self { sections }
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    /// Group index of token `p`.
    pub fn locate(&self, p: usize) -> usize {
        let idx = self.sections.partition_point(|s| s.start <= p) - 1;
        let section = self.sections[idx];
        let rank = p + 1;
        let preceding = section.start;
        // (first_group - 1) + ceil(..), reordered so first_group = 0 cannot underflow
        section.first_group + (rank - preceding).div_ceil(section.size) - 1
    }

    /// Materializes `F[0..n]`, section by section.
    fn fill(&self, n: usize) -> Vec<usize> {
        let mut entries = vec![0usize; n];
        let mut pieces = Vec::with_capacity(self.sections.len());
        let mut rest: &mut [usize] = &mut entries;
        let mut offset = 0;
        for (idx, section) in self.sections.iter().enumerate() {
            if offset >= n {
                break;
            }
            let end = self
                .sections
                .get(idx + 1)
                .map_or(n, |next| next.start.min(n));
            let (piece, tail) = rest.split_at_mut(end - offset);
            pieces.push((*section, piece));
            rest = tail;
            offset = end;
        }
        par::for_each(pieces, |(section, piece)| fill_section(section, piece));
        entries
    }
}

/// Tokens per parallel task inside one section.
const FILL_BLOCK: usize = 1 << 14;

fn fill_section(section: Section, piece: &mut [usize]) {
    let groups_per_block = (FILL_BLOCK / section.size).max(1);
    par::for_each_chunk_mut(piece, groups_per_block * section.size, |block, chunk| {
        let base = section.first_group + block * groups_per_block;
        for (g, run) in chunk.chunks_mut(section.size).enumerate() {
            run.fill(base + g);
        }
    });
}

/// `F`: group index of every token position `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MapWire", try_from = "MapWire")]
pub struct GroupIndexMap {
    entries: Vec<usize>,
    source: GroupingFunction,
}

impl GroupIndexMap {
    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn source(&self) -> &GroupingFunction {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest group index present, `None` for an empty map.
    pub fn max_group(&self) -> Option<usize> {
        self.entries.last().copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("map serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl std::ops::Index<usize> for GroupIndexMap {
    type Output = usize;

    fn index(&self, p: usize) -> &usize {
        &self.entries[p]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Variant {
    Logistic,
    Constant,
    Tabulated,
}

#[derive(Serialize, Deserialize)]
struct FunctionWire {
    variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    growth_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sizes: Option<Vec<usize>>,
}

impl From<GroupingFunction> for FunctionWire {
    fn from(function: GroupingFunction) -> Self {
        let mut wire = FunctionWire {
            variant: Variant::Constant,
            capacity: None,
            growth_rate: None,
            size: None,
            sizes: None,
        };
        match function.rule {
            Rule::Logistic {
                capacity,
                growth_rate,
            } => {
                wire.variant = Variant::Logistic;
                wire.capacity = Some(capacity);
                wire.growth_rate = Some(growth_rate);
            }
            Rule::Constant { size } => wire.size = Some(size),
            Rule::Tabulated { sizes } => {
                wire.variant = Variant::Tabulated;
                wire.sizes = Some(sizes);
            }
        }
        wire
    }
}

impl TryFrom<FunctionWire> for GroupingFunction {
    type Error = Error;

    fn try_from(wire: FunctionWire) -> Result<Self> {
        let missing = |field: &str| Error::InvalidFunction(format!("missing field `{field}`"));
        match wire.variant {
            Variant::Logistic => GroupingFunction::logistic(
                wire.capacity.ok_or_else(|| missing("capacity"))?,
                wire.growth_rate.ok_or_else(|| missing("growth_rate"))?,
            ),
            Variant::Constant => {
                GroupingFunction::constant(wire.size.ok_or_else(|| missing("size"))?)
            }
            Variant::Tabulated => {
                GroupingFunction::tabulated(wire.sizes.ok_or_else(|| missing("sizes"))?)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MapWire {
    n: usize,
    function: GroupingFunction,
    #[serde(rename = "F")]
    entries: Vec<usize>,
}

impl From<GroupIndexMap> for MapWire {
    fn from(map: GroupIndexMap) -> Self {
        MapWire {
            n: map.entries.len(),
            function: map.source,
            entries: map.entries,
        }
    }
}

impl TryFrom<MapWire> for GroupIndexMap {
    type Error = Error;

    fn try_from(wire: MapWire) -> Result<Self> {
        if wire.entries.len() != wire.n {
            return Err(Error::Shape(format!(
                "map declares n={} but holds {} entries",
                wire.n,
                wire.entries.len()
            )));
        }
        let expected = wire.function.build_map_parallel(wire.n);
        if expected.entries != wire.entries {
            return Err(Error::Shape(
                "map entries do not match the declared function".into(),
            ));
        }
        Ok(expected)
    }
}

/// One row of the closed-form cross-check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedFormRow {
    pub size: usize,
    /// Exact smallest index, as used by every construction here.
    pub smallest_index: usize,
    /// `floor((ln(Cy - y) - ln(C - y)) / r)`, defined for `1 <= y < C`.
    pub floored_inverse: Option<usize>,
    /// `x * (inv(x + 1) - inv(x))`, the count used by the layout.
    pub class_count: Option<usize>,
    /// `x * (inv(x + 1) - inv(x) + 1)`, the variant with an extra group per class.
    pub class_count_plus_one: Option<usize>,
}

/// Tabulates the uncorrected textbook closed forms next to the exact values.
///
/// For documentation only; no construction uses the uncorrected columns.
pub fn closed_form_cross_check(function: &GroupingFunction) -> Vec<ClosedFormRow> {
    let capacity = function.capacity();
    (1..=capacity)
        .map(|y| {
            let smallest_index = function
                .smallest_index_of_size(y)
                .expect("sizes 1..=capacity are valid");
            let floored_inverse = match function.rule() {
                Rule::Logistic {
                    capacity,
                    growth_rate,
                } if y < *capacity => {
                    let (c, y_f) = (*capacity as f64, y as f64);
                    Some(seed_index(
                        (((c * y_f - y_f).ln() - (c - y_f).ln()) / growth_rate).floor(),
                    ))
                }
                _ => None,
            };
            let class_count = function.elements_in_size_class(y).ok();
            let class_count_plus_one = class_count.map(|count| count.saturating_add(y));
            ClosedFormRow {
                size: y,
                smallest_index,
                floored_inverse,
                class_count,
                class_count_plus_one,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_tabulated() -> GroupingFunction {
        GroupingFunction::tabulated(vec![1, 2, 2, 3, 3]).unwrap()
    }

    fn logistic_16() -> GroupingFunction {
        GroupingFunction::logistic(16, 0.02).unwrap()
    }

    /// Integer-only reference for `F`: walk the groups by hand.
    fn reference_map(function: &GroupingFunction, n: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut group = 0;
        let mut left = function.size_of_group(0);
        for _ in 0..n {
            if left == 0 {
                group += 1;
                left = function.size_of_group(group);
            }
            out.push(group);
            left -= 1;
        }
        out
    }

    #[test]
    fn logistic_sizes() {
        let f = logistic_16();
        assert_eq!(f.size_of_group(0), 1);
        assert_eq!(f.size_of_group(38), 1);
        assert_eq!(f.size_of_group(39), 2);
        assert_eq!(f.size_of_group(usize::MAX), 16);
        assert_eq!(f.size_of_group(1 << 40), 16);
    }

    #[test]
    fn logistic_matches_quotient_form_below_the_top() {
        // Direct quotient e^{rj}·C / (C + e^{rj} - 1). Below C - 1 it agrees exactly.
        let quotient = |c: f64, r: f64, j: usize| -> usize {
            let e = (r * j as f64).exp();
            (c * e / (c + e - 1.0)).floor() as usize
        };
        for &(c, r) in &[(16usize, 0.02), (64, 0.5), (128, 0.005), (3, 1.0)] {
            let f = GroupingFunction::logistic(c, r).unwrap();
            for j in 0..5000 {
                if (r * j as f64).exp() > 1e300 {
                    break;
                }
                let q = quotient(c as f64, r, j);
                if q < c - 1 {
                    assert_eq!(f.size_of_group(j), q, "C={c} r={r} j={j}");
                }
            }
        }
    }

    #[test]
    fn capacity_one_normalizes_to_identity() {
        let f = GroupingFunction::logistic(1, 0.3).unwrap();
        assert_eq!(f.rule(), &Rule::Constant { size: 1 });
        assert_eq!(f.build_map_parallel(6).entries(), &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn rejects_invalid_functions() {
        assert!(GroupingFunction::logistic(0, 0.1).is_err());
        assert!(GroupingFunction::logistic(8, 0.0).is_err());
        assert!(GroupingFunction::logistic(8, f64::NAN).is_err());
        assert!(GroupingFunction::constant(0).is_err());
        assert!(GroupingFunction::tabulated(vec![]).is_err());
        assert!(GroupingFunction::tabulated(vec![2, 1]).is_err());
        assert!(GroupingFunction::tabulated(vec![0, 1]).is_err());
    }

    #[test]
    fn inverse_examples() {
        let f = logistic_16();
        assert_eq!(f.smallest_index_of_size(1).unwrap(), 0);
        assert_eq!(f.smallest_index_of_size(2).unwrap(), 39);
        let first_full = f.smallest_index_of_size(16).unwrap();
        assert_eq!(f.size_of_group(first_full), 16);
        assert_eq!(f.size_of_group(first_full - 1), 15);

        let ex = small_tabulated();
        assert_eq!(ex.smallest_index_of_size(1).unwrap(), 0);
        assert_eq!(ex.smallest_index_of_size(2).unwrap(), 1);
        assert_eq!(ex.smallest_index_of_size(3).unwrap(), 3);
    }

    #[test]
    fn inverse_rejects_out_of_range_sizes() {
        let f = logistic_16();
        assert!(matches!(
            f.smallest_index_of_size(0),
            Err(Error::InvalidSize { .. })
        ));
        assert!(matches!(
            f.smallest_index_of_size(17),
            Err(Error::InvalidSize { .. })
        ));
    }

    #[test]
    fn inverse_with_skipped_sizes_gives_empty_classes() {
        // r * C / 4 > 1, so the function jumps over some sizes.
        let f = GroupingFunction::logistic(128, 1.0).unwrap();
        assert_eq!(f.size_of_group(1), 2);
        assert_eq!(f.size_of_group(2), 7);
        assert_eq!(f.smallest_index_of_size(3).unwrap(), 2);
        assert_eq!(f.elements_in_size_class(3).unwrap(), 0);
        assert_eq!(
            f.build_map_parallel(5000).entries(),
            reference_map(&f, 5000).as_slice()
        );
    }

    #[test]
    fn tiny_growth_rate_saturates_at_horizon() {
        let f = GroupingFunction::logistic(4, 1e-300).unwrap();
        assert_eq!(f.smallest_index_of_size(2).unwrap(), INDEX_HORIZON);
        assert_eq!(f.build_map_parallel(7).entries(), &[0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(f.locate(1000), 1000);
    }

    #[test]
    fn class_counts() {
        let ex = small_tabulated();
        assert_eq!(ex.elements_in_size_class(1).unwrap(), 1);
        assert_eq!(ex.elements_in_size_class(2).unwrap(), 4);
        assert!(matches!(
            ex.elements_in_size_class(3),
            Err(Error::UnboundedClass { .. })
        ));
        assert!(matches!(
            ex.elements_in_size_class(0),
            Err(Error::InvalidSize { .. })
        ));
        let one = GroupingFunction::constant(1).unwrap();
        assert!(matches!(
            one.elements_in_size_class(1),
            Err(Error::UnboundedClass { .. })
        ));
    }

    #[test]
    fn small_tabulated_maps() {
        let golden = [0, 1, 1, 2, 2, 3, 3, 3, 4, 4, 4];
        let ex = small_tabulated();
        assert_eq!(ex.build_map_sequential(11).entries(), &golden);
        assert_eq!(ex.build_map_parallel(11).entries(), &golden);
        assert_eq!(ex.locate(5), 3);
        assert_eq!(ex.locate(10), 4);
        assert_eq!(ex.locate(0), 0);
    }

    #[test]
    fn small_maps() {
        for f in [
            small_tabulated(),
            logistic_16(),
            GroupingFunction::constant(7).unwrap(),
        ] {
            assert!(f.build_map_sequential(0).is_empty());
            assert!(f.build_map_parallel(0).is_empty());
        }
        let two = GroupingFunction::constant(2).unwrap();
        assert_eq!(two.build_map_sequential(5).entries(), &[0, 0, 1, 1, 2]);
        assert_eq!(two.build_map_parallel(5).entries(), &[0, 0, 1, 1, 2]);
    }

    #[test]
    fn parallel_matches_reference() {
        let cases = [
            (logistic_16(), 10_000),
            (GroupingFunction::logistic(64, 0.5).unwrap(), 3),
            (GroupingFunction::logistic(2, 0.005).unwrap(), 100_000),
            (GroupingFunction::constant(512).unwrap(), 5000),
            (small_tabulated(), 1),
        ];
        for (f, n) in cases {
            let reference = reference_map(&f, n);
            assert_eq!(
                f.build_map_sequential(n).entries(),
                reference.as_slice(),
                "{f}"
            );
            assert_eq!(
                f.build_map_parallel(n).entries(),
                reference.as_slice(),
                "{f}"
            );
        }
    }

    #[test]
    fn tail_section_is_size_capacity() {
        let f = logistic_16();
        let layout = f.layout();
        let tail = layout.sections().last().unwrap();
        assert_eq!(tail.size, 16);
        assert_eq!(tail.first_group, f.smallest_index_of_size(16).unwrap());
        assert_eq!(
            layout.sections()[0],
            Section {
                size: 1,
                first_group: 0,
                start: 0
            }
        );
    }

    #[test]
    fn json_layout() {
        let map = small_tabulated().build_map_parallel(4);
        assert_eq!(
            map.to_json(),
            r#"{"n":4,"function":{"variant":"tabulated","sizes":[1,2,2,3,3]},"F":[0,1,1,2]}"#
        );
        let logistic = logistic_16().build_map_parallel(2);
        assert_eq!(
            logistic.to_json(),
            r#"{"n":2,"function":{"variant":"logistic","capacity":16,"growth_rate":0.02},"F":[0,1]}"#
        );
        let constant = GroupingFunction::constant(2).unwrap().build_map_parallel(3);
        assert_eq!(
            constant.to_json(),
            r#"{"n":3,"function":{"variant":"constant","size":2},"F":[0,0,1]}"#
        );
        assert_eq!(GroupIndexMap::from_json(&map.to_json()).unwrap(), map);
    }

    #[test]
    fn json_rejects_inconsistent_maps() {
        let bad_len = r#"{"n":3,"function":{"variant":"constant","size":2},"F":[0,0]}"#;
        assert!(GroupIndexMap::from_json(bad_len).is_err());
        let bad_entries = r#"{"n":3,"function":{"variant":"constant","size":2},"F":[0,1,1]}"#;
        assert!(GroupIndexMap::from_json(bad_entries).is_err());
        let missing = r#"{"n":0,"function":{"variant":"logistic","capacity":4},"F":[]}"#;
        assert!(GroupIndexMap::from_json(missing).is_err());
    }

    #[test]
    fn cross_check_shows_uncorrected_forms() {
        let rows = closed_form_cross_check(&logistic_16());
        assert_eq!(rows.len(), 16);
        assert_eq!(rows[1].smallest_index, 39);
        assert_eq!(rows[1].floored_inverse, Some(38));
        assert_eq!(rows[15].floored_inverse, None);

        let rows = closed_form_cross_check(&small_tabulated());
        assert_eq!(rows[0].class_count, Some(1));
        assert_eq!(rows[0].class_count_plus_one, Some(2));
        assert_eq!(rows[1].class_count, Some(4));
        assert_eq!(rows[1].class_count_plus_one, Some(6));
    }
}
