//! Branch models and their configuration.
//!
//! * visual: `[ResNet ‖ AUs] → TCN → Transformer × N → pool → FFN`
//! * audio:  `wav2vec → TCN → pool → FFN`

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::layers::{
    masked_mean_pool, BoundParams, FfnHead, ParamStore, TcnEncoder, TransformerEncoderBlock,
};
use crate::real::Real;

pub const RESNET_DIM: usize = 512;
pub const AU_DIM: usize = 34;
pub const VISUAL_DIM: usize = RESNET_DIM + AU_DIM;
pub const AUDIO_DIM: usize = 768;
pub const OUTPUT_DIM: usize = 6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input is for the {found} branch, model is {expected}")]
    ModalityMismatch { expected: Branch, found: Branch },
    #[error("visual channels are misaligned: resnet has {resnet} frames, aus has {aus}")]
    Alignment { resnet: usize, aus: usize },
    #[error("{branch} model expects {expected}-dim features, input has {found}")]
    InputDim {
        branch: Branch,
        expected: usize,
        found: usize,
    },
    #[error("parameter layout does not match config: {0}")]
    ParamLayout(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which modality a branch model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Visual,
    Audio,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Visual => "visual",
            Branch::Audio => "audio",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visual" => Ok(Branch::Visual),
            "audio" => Ok(Branch::Audio),
            other => Err(ModelError::Config(format!("unknown branch {other:?}"))),
        }
    }
}

/// Architecture hyperparameters. Unknown keys are rejected when parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_encoder_blocks: usize,
    pub tcn_layers: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub visual_in_dim: usize,
    pub audio_in_dim: usize,
    pub max_visual_len: usize,
    pub max_audio_len: usize,
    pub ffn_hidden: usize,
    pub output_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-scale settings: 128-dim attention, 4 heads, 2 encoder blocks,
    /// 5 convolution layers of kernel 3, 300 frames.
    pub fn paper() -> Self {
        Self {
            d_model: 128,
            num_heads: 4,
            num_encoder_blocks: 2,
            tcn_layers: 5,
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8, 16],
            visual_in_dim: VISUAL_DIM,
            audio_in_dim: AUDIO_DIM,
            max_visual_len: 300,
            max_audio_len: 300,
            ffn_hidden: 64,
            output_dim: OUTPUT_DIM,
            seed: 0,
        }
    }

    /// Desk-scale settings used by the test suites and the shipped config.
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            max_visual_len: 32,
            max_audio_len: 32,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.visual_in_dim != VISUAL_DIM {
            return fail(format!(
                "visual_in_dim must be {RESNET_DIM} + {AU_DIM} = {VISUAL_DIM}, got {}",
                self.visual_in_dim
            ));
        }
        if self.audio_in_dim != AUDIO_DIM {
            return fail(format!(
                "audio_in_dim must be {AUDIO_DIM}, got {}",
                self.audio_in_dim
            ));
        }
        if self.output_dim != OUTPUT_DIM {
            return fail(format!(
                "output_dim must be {OUTPUT_DIM}, got {}",
                self.output_dim
            ));
        }
        if self.d_model == 0 || self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads)
        {
            return fail(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.tcn_layers == 0 || self.dilations.len() != self.tcn_layers {
            return fail(format!(
                "need one dilation per TCN layer: {} layers, {} dilations",
                self.tcn_layers,
                self.dilations.len()
            ));
        }
        if self.dilations.contains(&0) || self.kernel_size == 0 {
            return fail("kernel_size and dilations must be positive".into());
        }
        if self.max_visual_len == 0 || self.max_audio_len == 0 || self.ffn_hidden == 0 {
            return fail("sequence lengths and ffn_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn in_dim(&self, branch: Branch) -> usize {
        match branch {
            Branch::Visual => self.visual_in_dim,
            Branch::Audio => self.audio_in_dim,
        }
    }

    pub fn max_len(&self, branch: Branch) -> usize {
        match branch {
            Branch::Visual => self.max_visual_len,
            Branch::Audio => self.max_audio_len,
        }
    }

    /// Hidden width of the Transformer position-wise feed-forward layer.
    pub fn block_ff_hidden(&self) -> usize {
        4 * self.d_model
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Concatenates ResNet and AU features frame by frame, ResNet first.
pub fn concat_visual_channels<T: Real>(
    resnet: &Tensor<T>,
    aus: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    let (tr, dr) = resnet.dims2()?;
    let (ta, da) = aus.dims2()?;
    if tr != ta {
        return Err(ModelError::Alignment {
            resnet: tr,
            aus: ta,
        });
    }
    let mut data = Vec::with_capacity(tr * (dr + da));
    for t in 0..tr {
        data.extend_from_slice(resnet.row(t));
        data.extend_from_slice(aus.row(t));
    }
    Ok(Tensor::new(&[tr, dr + da], data)?)
}

/// One length-normalized sample for a branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchInput<T> {
    pub branch: Branch,
    /// `[T, in_dim]`
    pub values: Tensor<T>,
    /// `true` for real frames, `false` for padding.
    pub mask: Vec<bool>,
}

/// A complete single-modality regression model.
#[derive(Debug, Clone)]
pub struct BranchModel<T> {
    branch: Branch,
    config: ModelConfig,
    store: ParamStore<T>,
    tcn: TcnEncoder,
    blocks: Vec<TransformerEncoderBlock>,
    head: FfnHead,
}

impl<T: Real> BranchModel<T> {
    /// Builds and initializes a model. The same config and branch always
    /// produce bit-identical parameters.
    pub fn new(config: &ModelConfig, branch: Branch) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(match branch {
            Branch::Visual => 1,
            Branch::Audio => 2,
        });
        let mut store = ParamStore::new();
        let tcn = TcnEncoder::new(
            &mut store,
            "tcn",
            config.in_dim(branch),
            config.d_model,
            config.kernel_size,
            &config.dilations,
            &mut rng,
        );
        let n_blocks = match branch {
            Branch::Visual => config.num_encoder_blocks,
            Branch::Audio => 0,
        };
        let blocks = (0..n_blocks)
            .map(|i| {
                TransformerEncoderBlock::new(
                    &mut store,
                    &format!("encoder.{i}"),
                    config.d_model,
                    config.num_heads,
                    config.block_ff_hidden(),
                    &mut rng,
                )
            })
            .collect();
        let head = FfnHead::new(
            &mut store,
            "head",
            config.d_model,
            config.ffn_hidden,
            config.output_dim,
            &mut rng,
        );
        Ok(Self {
            branch,
            config: config.clone(),
            store,
            tcn,
            blocks,
            head,
        })
    }

    /// Rebuilds a model around saved parameters, checking names and shapes.
    pub fn with_params(
        config: &ModelConfig,
        branch: Branch,
        params: Vec<(String, Tensor<T>)>,
    ) -> Result<Self, ModelError> {
        let mut model = Self::new(config, branch)?;
        if params.len() != model.store.len() {
            return Err(ModelError::ParamLayout(format!(
                "expected {} tensors, got {}",
                model.store.len(),
                params.len()
            )));
        }
        let names = model.store.names().to_vec();
        for (i, ((name, value), want)) in params.into_iter().zip(names).enumerate() {
            let slot = &mut model.store.values_mut()[i];
            if name != want || value.shape() != slot.shape() {
                return Err(ModelError::ParamLayout(format!(
                    "tensor {i}: got {name} {:?}, expected {want} {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        Ok(model)
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn tcn(&self) -> &TcnEncoder {
        &self.tcn
    }

    pub fn blocks(&self) -> &[TransformerEncoderBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &FfnHead {
        &self.head
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Parameter count from the config alone.
    pub fn expected_param_count(config: &ModelConfig, branch: Branch) -> usize {
        let d = config.d_model;
        let k = config.kernel_size;
        let mut n = 0;
        for layer in 0..config.tcn_layers {
            let input = if layer == 0 { config.in_dim(branch) } else { d };
            n += d * input * k + d;
        }
        if branch == Branch::Visual {
            n += config.num_encoder_blocks
                * TransformerEncoderBlock::param_count(d, config.block_ff_hidden());
        }
        n + FfnHead::param_count(d, config.ffn_hidden, config.output_dim)
    }

    /// Forward pass on an existing tape. Returns the `[6]` prediction.
    pub fn forward<'t>(
        &self,
        params: &BoundParams<'t, T>,
        input: &BranchInput<T>,
    ) -> Result<Var<'t, T>, ModelError> {
        if input.branch != self.branch {
            return Err(ModelError::ModalityMismatch {
                expected: self.branch,
                found: input.branch,
            });
        }
        let (t_len, dim) = input.values.dims2()?;
        let expected = self.config.in_dim(self.branch);
        if dim != expected {
            return Err(ModelError::InputDim {
                branch: self.branch,
                expected,
                found: dim,
            });
        }
        if input.mask.len() != t_len {
            return Err(TensorError::MaskLength {
                op: "branch_forward",
                mask: input.mask.len(),
                len: t_len,
            }
            .into());
        }
        if !input.mask.iter().any(|&m| m) {
            return Err(TensorError::AllMasked {
                op: "branch_forward",
            }
            .into());
        }
        let tape = params.var(self.head.w1).tape();
        let x = tape.constant(input.values.clone());
        let mut h = self.tcn.forward(params, x)?;
        for block in &self.blocks {
            h = block.forward(params, h, &input.mask)?;
        }
        let pooled = masked_mean_pool(h, &input.mask)?;
        Ok(self.head.forward(params, pooled)?)
    }

    /// Tape-local inference for one sample.
    pub fn predict(&self, input: &BranchInput<T>) -> Result<Tensor<T>, ModelError> {
        let tape = Tape::new();
        let params = self.store.bind(&tape, false);
        let y = self.forward(&params, input)?;
        let out = y.value().clone();
        Ok(out)
    }

    /// Human-readable architecture summary, one `key=value` per line.
    pub fn describe(&self) -> String {
        format!(
            "branch={}\ntcn_layers={}\ndilations={:?}\nreceptive_field={}\ntransformer_blocks={}\nd_model={}\nnum_heads={}\nffn_hidden={}\nparameters={}\n",
            self.branch,
            self.tcn.layers.len(),
            self.config.dilations,
            self.tcn.receptive_field(),
            self.blocks.len(),
            self.config.d_model,
            self.config.num_heads,
            self.config.ffn_hidden,
            self.param_count(),
        )
    }
}
