use rand::Rng;

use crate::autodiff::{TensorError, Var};
use crate::layers::{BoundParams, Init, ParamId, ParamStore};
use crate::real::Real;

/// One dilated causal convolution over a `[T, in_dim]` sequence.
#[derive(Debug, Clone)]
pub struct CausalConv1dLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    /// `[out_dim, in_dim, kernel_size]`
    pub weight: ParamId,
    /// `[out_dim]`
    pub bias: ParamId,
}

impl CausalConv1dLayer {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        kernel_size: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{prefix}.weight"),
            Init::HeUniform {
                fan_in: in_dim * kernel_size,
            }
            .sample(&[out_dim, in_dim, kernel_size], rng),
        );
        let bias = store.add(
            format!("{prefix}.bias"),
            Init::Zeros.sample(&[out_dim], rng),
        );
        Self {
            in_dim,
            out_dim,
            kernel_size,
            dilation,
            weight,
            bias,
        }
    }

    /// Number of past steps (including the current one) an output sees.
    pub fn receptive_field(&self) -> usize {
        (self.kernel_size - 1) * self.dilation + 1
    }

    pub fn forward<'t, T: Real>(
        &self,
        params: &BoundParams<'t, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        x.causal_conv1d(
            params.var(self.weight),
            params.var(self.bias),
            self.dilation,
        )
    }
}

/// Stack of causal convolutions, each followed by ReLU.
///
/// The first layer projects the input features to `d_model`; the remaining
/// layers keep `d_model`. There are no residual connections.
#[derive(Debug, Clone)]
pub struct TcnEncoder {
    pub layers: Vec<CausalConv1dLayer>,
}

impl TcnEncoder {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        d_model: usize,
        kernel_size: usize,
        dilations: &[usize],
        rng: &mut R,
    ) -> Self {
        let layers = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let input = if i == 0 { in_dim } else { d_model };
                CausalConv1dLayer::new(
                    store,
                    &format!("{prefix}.{i}"),
                    input,
                    d_model,
                    kernel_size,
                    d,
                    rng,
                )
            })
            .collect();
        Self { layers }
    }

    /// `1 + Σ (k − 1)·d` over the layers.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| l.receptive_field() - 1)
            .sum::<usize>()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward<'t, T: Real>(
        &self,
        params: &BoundParams<'t, T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(params, h)?.relu();
        }
        Ok(h)
    }
}
