use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;

use super::{DataError, FeatureSequence, Modality};

pub const FEATURE_MAGIC: [u8; 4] = *b"EMIF";
pub const FEATURE_VERSION: u32 = 1;
/// magic + version + modality + reserved + rows + cols
pub const FEATURE_HEADER_LEN: usize = 4 + 4 + 1 + 3 + 4 + 4;

/// Serializes a sequence to the little-endian `EMIF` layout.
pub fn encode_feature_file(seq: &FeatureSequence) -> Vec<u8> {
    let rows = seq.len();
    let cols = seq.dim();
    let mut buf = Vec::with_capacity(FEATURE_HEADER_LEN + rows * cols * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.push(seq.modality.code());
    buf.extend_from_slice(&[0; 3]);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in seq.values().data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Parses an `EMIF` buffer. Either the whole sequence is returned or an error.
pub fn decode_feature_file(
    bytes: &[u8],
    sample_id: impl Into<String>,
) -> Result<FeatureSequence, DataError> {
    if bytes.len() < FEATURE_HEADER_LEN {
        return Err(DataError::Truncated {
            expected: FEATURE_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(DataError::BadMagic { found: magic });
    }
    let version = u32_at(4);
    if version != FEATURE_VERSION {
        return Err(DataError::UnsupportedVersion { found: version });
    }
    let code = bytes[8];
    let modality = Modality::from_code(code).ok_or(DataError::UnknownModality { code })?;
    let reserved: [u8; 3] = bytes[9..12].try_into().unwrap();
    if reserved != [0; 3] {
        return Err(DataError::ReservedBytes { found: reserved });
    }
    let rows = u32_at(12) as usize;
    let cols = u32_at(16) as usize;
    if cols != modality.dim() {
        return Err(DataError::DimMismatch {
            modality,
            expected: modality.dim(),
            found: cols,
        });
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(FEATURE_HEADER_LEN))
        .unwrap_or(usize::MAX);
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    let data: Vec<f32> = bytes[FEATURE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Tensor::new(&[rows, cols], data).expect("length checked above");
    FeatureSequence::new(sample_id, modality, values)
}

/// Reads a feature file; the sample id defaults to the file stem up to the first `.`.
pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.split('.').next())
        .unwrap_or_default()
        .to_string();
    decode_feature_file(&bytes, id)
}

/// Writes the encoded file in one call.
pub fn write_feature_file(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, encode_feature_file(seq)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
