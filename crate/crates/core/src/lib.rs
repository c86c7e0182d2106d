//! Multimodal temporal regression for emotional mimicry intensity.
//!
//! Per-frame visual (ResNet + action-unit) and acoustic (wav2vec) feature
//! sequences are encoded by dilated causal convolution stacks, optionally
//! refined by Transformer encoder blocks, pooled over time and mapped to six
//! emotion intensities. Branches are trained separately with MSE and combined
//! by late fusion; evaluation uses the mean Pearson correlation over the six
//! dimensions.

pub mod autodiff;
pub mod data;
pub mod fusion;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod real;
pub mod train;

pub use autodiff::{Tape, Tensor, TensorError, Var};
pub use real::Real;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub mod chapter1 {}
    #[doc = include_str!("../../../book/src/model.md")]
    pub mod chapter2 {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod chapter3 {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod chapter4 {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod chapter5 {}
}
