use rand::Rng;

use crate::autodiff::{Tensor, TensorError, Var};
use crate::layers::{BoundParams, Init, ParamId, ParamStore};
use crate::real::Real;

const LN_EPS: f64 = 1e-5;

/// Pre-norm Transformer encoder block:
///
/// ```text
/// h = x + MHA(LN₁(x))
/// y = h + W₂·ReLU(W₁·LN₂(h) + b₁) + b₂
/// ```
///
/// `W_o` and `W₂` start at zero, so a freshly built block is the identity
/// map and training grows the residual branches from there.
///
/// Masked time steps get `-inf` attention logits as keys, so they never
/// contribute to any output row. No positional encoding is added.
#[derive(Debug, Clone)]
pub struct TransformerEncoderBlock {
    pub d_model: usize,
    pub num_heads: usize,
    pub ff_hidden: usize,
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
}

impl TransformerEncoderBlock {
    /// Panics unless `num_heads` divides `d_model`.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        num_heads: usize,
        ff_hidden: usize,
        rng: &mut R,
    ) -> Self {
        assert!(
            num_heads > 0 && d_model.is_multiple_of(num_heads),
            "d_model {d_model} not divisible by {num_heads} heads"
        );
        let d = d_model;
        let xavier = Init::XavierUniform {
            fan_in: d,
            fan_out: d,
        };
        let mut add = |name: &str, init: Init, shape: &[usize]| {
            store.add(format!("{prefix}.{name}"), init.sample(shape, rng))
        };
        let ln1_gamma = add("ln1.gamma", Init::Ones, &[d]);
        let ln1_beta = add("ln1.beta", Init::Zeros, &[d]);
        let wq = add("attn.wq", xavier, &[d, d]);
        let bq = add("attn.bq", Init::Zeros, &[d]);
        let wk = add("attn.wk", xavier, &[d, d]);
        let bk = add("attn.bk", Init::Zeros, &[d]);
        let wv = add("attn.wv", xavier, &[d, d]);
        let bv = add("attn.bv", Init::Zeros, &[d]);
        let wo = add("attn.wo", Init::Zeros, &[d, d]);
        let bo = add("attn.bo", Init::Zeros, &[d]);
        let ln2_gamma = add("ln2.gamma", Init::Ones, &[d]);
        let ln2_beta = add("ln2.beta", Init::Zeros, &[d]);
        let ff_w1 = add("ff.w1", Init::HeUniform { fan_in: d }, &[d, ff_hidden]);
        let ff_b1 = add("ff.b1", Init::Zeros, &[ff_hidden]);
        let ff_w2 = add("ff.w2", Init::Zeros, &[ff_hidden, d]);
        let ff_b2 = add("ff.b2", Init::Zeros, &[d]);
        Self {
            d_model,
            num_heads,
            ff_hidden,
            ln1_gamma,
            ln1_beta,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln2_gamma,
            ln2_beta,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Closed-form parameter count.
    pub fn param_count(d_model: usize, ff_hidden: usize) -> usize {
        let d = d_model;
        2 * 2 * d + 4 * (d * d + d) + (d * ff_hidden + ff_hidden) + (ff_hidden * d + d)
    }

    pub fn forward<'t, T: Real>(
        &self,
        params: &BoundParams<'t, T>,
        x: Var<'t, T>,
        mask: &[bool],
    ) -> Result<Var<'t, T>, TensorError> {
        self.forward_inner(params, x, mask, None)
    }

    /// Like [`forward`](Self::forward), also returning each head's `[T, T]`
    /// attention weights.
    pub fn forward_with_attention<'t, T: Real>(
        &self,
        params: &BoundParams<'t, T>,
        x: Var<'t, T>,
        mask: &[bool],
    ) -> Result<(Var<'t, T>, Vec<Tensor<T>>), TensorError> {
        let mut weights = Vec::with_capacity(self.num_heads);
        let y = self.forward_inner(params, x, mask, Some(&mut weights))?;
        Ok((y, weights))
    }

    fn forward_inner<'t, T: Real>(
        &self,
        params: &BoundParams<'t, T>,
        x: Var<'t, T>,
        mask: &[bool],
        mut attention: Option<&mut Vec<Tensor<T>>>,
    ) -> Result<Var<'t, T>, TensorError> {
        let shape = x.shape();
        let t_len = match shape[..] {
            [t, d] if d == self.d_model => t,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "transformer_block",
                    lhs: shape,
                    rhs: vec![mask.len(), self.d_model],
                })
            }
        };
        if mask.len() != t_len {
            return Err(TensorError::MaskLength {
                op: "transformer_block",
                mask: mask.len(),
                len: t_len,
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(TensorError::AllMasked {
                op: "transformer_block",
            });
        }
        let eps = T::from_f64(LN_EPS);
        let p = |id| params.var(id);

        // key mask, identical for every query row
        let mut key_bias = Tensor::zeros(&[t_len, t_len]);
        for r in 0..t_len {
            for (c, &valid) in mask.iter().enumerate() {
                if !valid {
                    key_bias.data_mut()[r * t_len + c] = T::neg_infinity();
                }
            }
        }

        let n1 = x.layer_norm(p(self.ln1_gamma), p(self.ln1_beta), eps)?;
        let q = n1.matmul(p(self.wq))?.add_bias(p(self.bq))?;
        let k = n1.matmul(p(self.wk))?.add_bias(p(self.bk))?;
        let v = n1.matmul(p(self.wv))?.add_bias(p(self.bv))?;
        let dh = self.head_dim();
        let scale = T::one() / T::from_f64(dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let qh = q.slice_cols(h * dh, dh)?;
            let kh = k.slice_cols(h * dh, dh)?;
            let vh = v.slice_cols(h * dh, dh)?;
            let scores = qh.matmul(kh.transpose()?)?.scale(scale);
            let weights = scores.add_const(&key_bias)?.softmax(1)?;
            if let Some(out) = attention.as_deref_mut() {
                out.push(weights.value().clone());
            }
            heads.push(weights.matmul(vh)?);
        }
        let merged = Var::concat_cols(&heads)?;
        let attn = merged.matmul(p(self.wo))?.add_bias(p(self.bo))?;
        let h1 = x.add(attn)?;

        let n2 = h1.layer_norm(p(self.ln2_gamma), p(self.ln2_beta), eps)?;
        let ff = n2
            .matmul(p(self.ff_w1))?
            .add_bias(p(self.ff_b1))?
            .relu()
            .matmul(p(self.ff_w2))?
            .add_bias(p(self.ff_b2))?;
        h1.add(ff)
    }
}
