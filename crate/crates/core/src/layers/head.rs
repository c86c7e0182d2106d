use rand::Rng;

use crate::autodiff::{TensorError, Var};
use crate::layers::{BoundParams, Init, ParamId, ParamStore};
use crate::real::Real;

/// Two fully connected layers with ReLU between: `ReLU(x·W₁ + b₁)·W₂ + b₂`.
#[derive(Debug, Clone)]
pub struct FfnHead {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// `[in_dim, hidden]`
    pub w1: ParamId,
    pub b1: ParamId,
    /// `[hidden, out_dim]`
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnHead {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w1 = store.add(
            format!("{prefix}.w1"),
            Init::HeUniform { fan_in: in_dim }.sample(&[in_dim, hidden], rng),
        );
        let b1 = store.add(format!("{prefix}.b1"), Init::Zeros.sample(&[hidden], rng));
        let w2 = store.add(
            format!("{prefix}.w2"),
            Init::HeUniform { fan_in: hidden }.sample(&[hidden, out_dim], rng),
        );
        let b2 = store.add(format!("{prefix}.b2"), Init::Zeros.sample(&[out_dim], rng));
        Self {
            in_dim,
            hidden,
            out_dim,
            w1,
            b1,
            w2,
            b2,
        }
    }

    /// Closed-form parameter count.
    pub fn param_count(in_dim: usize, hidden: usize, out_dim: usize) -> usize {
        in_dim * hidden + hidden + hidden * out_dim + out_dim
    }

    /// Maps a pooled `[in_dim]` vector to `[out_dim]`.
    pub fn forward<'t, T: Real>(
        &self,
        params: &BoundParams<'t, T>,
        pooled: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let shape = pooled.shape();
        if shape != [self.in_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "ffn_head",
                lhs: shape,
                rhs: vec![self.in_dim],
            });
        }
        let x = pooled.reshape(&[1, self.in_dim])?;
        let h = x
            .matmul(params.var(self.w1))?
            .add_bias(params.var(self.b1))?
            .relu();
        let y = h
            .matmul(params.var(self.w2))?
            .add_bias(params.var(self.b2))?;
        y.reshape(&[self.out_dim])
    }
}
