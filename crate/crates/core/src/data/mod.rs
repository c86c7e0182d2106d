//! Feature ingestion: the binary feature-file codec, the sample manifest,
//! length normalization with validity masks, deterministic batching and a
//! synthetic dataset generator.

mod batch;
mod feature_file;
mod manifest;
mod normalize;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::model::{AUDIO_DIM, AU_DIM, RESNET_DIM};

pub use batch::{make_batches, shuffle_order, Batch, PaddedSequences, Sample, SplitData};
pub use feature_file::{
    decode_feature_file, encode_feature_file, read_feature_file, write_feature_file,
    FEATURE_HEADER_LEN, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use manifest::{Manifest, ManifestRow, MANIFEST_HEADER};
pub use normalize::normalize_length;
pub use synth::{generate_synthetic_dataset, SynthSpec};

/// Emotion dimensions, in label and prediction column order.
pub const EMOTIONS: [&str; 6] = [
    "admiration",
    "amusement",
    "determination",
    "empathic_pain",
    "excitement",
    "joy",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected \"EMIF\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported feature file version {found}")]
    UnsupportedVersion { found: u32 },
    #[error("unknown modality code {code}")]
    UnknownModality { code: u8 },
    #[error("reserved header bytes must be zero, got {found:?}")]
    ReservedBytes { found: [u8; 3] },
    #[error("{modality} features are {expected}-dim, got {found}")]
    DimMismatch {
        modality: Modality,
        expected: usize,
        found: usize,
    },
    #[error("truncated feature file: expected {expected} bytes, got {found}")]
    Truncated { expected: usize, found: usize },
    #[error("feature file has {extra} bytes past the payload")]
    TrailingBytes { extra: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("sample {sample_id}: empty {modality} sequence")]
    EmptySequence {
        sample_id: String,
        modality: Modality,
    },
    #[error("sample {sample_id}: resnet has {resnet} frames, aus has {aus}")]
    Alignment {
        sample_id: String,
        resnet: usize,
        aus: usize,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("duplicate sample id {id}")]
    DuplicateId { id: String },
    #[error("sample {id} appears in both {first} and {second}")]
    OverlappingSplits {
        id: String,
        first: Split,
        second: Split,
    },
    #[error("sample {id}: missing feature file {}", path.display())]
    MissingFile { id: String, path: PathBuf },
    #[error("label {value} outside [0, 1]")]
    LabelRange { value: f64 },
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
    #[error("split {0} has no samples")]
    EmptySplit(Split),
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Per-frame feature source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    VisualResnet,
    VisualAus,
    AudioW2v,
}

impl Modality {
    pub const ALL: [Modality; 3] = [
        Modality::VisualResnet,
        Modality::VisualAus,
        Modality::AudioW2v,
    ];

    /// Code stored in feature-file headers.
    pub fn code(self) -> u8 {
        match self {
            Modality::VisualResnet => 1,
            Modality::VisualAus => 2,
            Modality::AudioW2v => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Modality::VisualResnet),
            2 => Some(Modality::VisualAus),
            3 => Some(Modality::AudioW2v),
            _ => None,
        }
    }

    /// Feature width: 512 (ResNet18), 34 (17 AUs × presence/intensity), 768 (wav2vec 2.0).
    pub fn dim(self) -> usize {
        match self {
            Modality::VisualResnet => RESNET_DIM,
            Modality::VisualAus => AU_DIM,
            Modality::AudioW2v => AUDIO_DIM,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::VisualResnet => "visual_resnet",
            Modality::VisualAus => "visual_aus",
            Modality::AudioW2v => "audio_w2v",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(DataError::UnknownSplit(other.to_string())),
        }
    }
}

/// One sample's per-frame features for a single modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub sample_id: String,
    pub modality: Modality,
    /// `[T_raw, modality.dim()]`
    values: Tensor<f32>,
}

impl FeatureSequence {
    pub fn new(
        sample_id: impl Into<String>,
        modality: Modality,
        values: Tensor<f32>,
    ) -> Result<Self, DataError> {
        let (_, cols) = match values.shape() {
            &[r, c] => (r, c),
            other => {
                return Err(DataError::DimMismatch {
                    modality,
                    expected: modality.dim(),
                    found: other.last().copied().unwrap_or(0),
                })
            }
        };
        if cols != modality.dim() {
            return Err(DataError::DimMismatch {
                modality,
                expected: modality.dim(),
                found: cols,
            });
        }
        if let Some(i) = values.data().iter().position(|x| !x.is_finite()) {
            return Err(DataError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(Self {
            sample_id: sample_id.into(),
            modality,
            values,
        })
    }

    pub fn values(&self) -> &Tensor<f32> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.modality.dim()
    }
}

/// Six emotion intensities in `[0, 1]`, ordered as [`EMOTIONS`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelVector([f64; 6]);

impl LabelVector {
    pub fn new(values: [f64; 6]) -> Result<Self, DataError> {
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::LabelRange { value: v });
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64; 6] {
        &self.0
    }
}
