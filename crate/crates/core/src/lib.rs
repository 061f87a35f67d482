//! Dynamic grouping of attention position indices for running rotary-embedding
//! transformers past their pretraining context length.
//!
//! Tokens far from a query share group position indices, with group sizes
//! that grow along a logistic curve; nearby tokens inside a neighbor window
//! keep exact positions. Constant-size grouping (Self-Extend) is the special
//! case [`GroupingFunction::constant`].
//!
//! - [`grouping`]: group-size functions and the token → group map, built by a
//!   sequential reference and by an independent-section closed form.
//! - [`posmap`]: key/query position assignment, relative positions and the
//!   maximum context length.
//! - [`attention`]: RoPE, plain and merged causal attention, and a toy decoder.
//! - [`cli`]: the `selfext` command-line tool.

pub mod attention;
pub mod cli;
pub mod error;
pub mod grouping;
pub mod par;
pub mod posmap;

pub use error::{Error, Result};
pub use grouping::{GroupIndexMap, GroupingFunction};
pub use posmap::{assign_positions, max_context_length, PositionAssignment};
