//! Neural building blocks: dilated causal convolution stacks, pre-norm
//! Transformer encoder blocks, the two-layer regression head and masked
//! temporal pooling.
//!
//! Layers own no tensors. Their parameters live in a [`ParamStore`] and are
//! referenced by [`ParamId`]; a forward pass reads them through
//! [`BoundParams`], the store's values recorded on one tape.

mod attention;
mod conv;
mod head;
mod params;

pub use attention::TransformerEncoderBlock;
pub use conv::{CausalConv1dLayer, TcnEncoder};
pub use head::FfnHead;
pub use params::{BoundParams, Init, ParamId, ParamStore};

use crate::autodiff::{TensorError, Var};
use crate::real::Real;

/// Mean over the valid (`true`) time steps of a `[T, d]` sequence.
pub fn masked_mean_pool<'t, T: Real>(
    x: Var<'t, T>,
    mask: &[bool],
) -> Result<Var<'t, T>, TensorError> {
    x.masked_mean_rows(mask)
}
