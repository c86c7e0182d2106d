//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every differentiable operation applied to its
//! [`Var`]s. [`Tape::backward`] replays the record in reverse and leaves a
//! gradient on every node that requires one. A tape is single use: a second
//! backward pass is rejected rather than accumulated.

mod tape;
mod tensor;

use thiserror::Error;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("{op}: every position is masked")]
    AllMasked { op: &'static str },
    #[error("{op}: mask has {mask} entries for {len} positions")]
    MaskLength {
        op: &'static str,
        mask: usize,
        len: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}
