use crate::autodiff::Tensor;

use super::{DataError, FeatureSequence};

/// Brings a sequence to exactly `target` frames.
///
/// Longer sequences keep frames `floor(i * T_raw / target)`; shorter ones are
/// zero-padded at the end. The mask is `true` for real frames.
pub fn normalize_length(
    seq: &FeatureSequence,
    target: usize,
) -> Result<(Tensor<f32>, Vec<bool>), DataError> {
    let raw = seq.len();
    if raw == 0 || target == 0 {
        return Err(DataError::EmptySequence {
            sample_id: seq.sample_id.clone(),
            modality: seq.modality,
        });
    }
    let dim = seq.dim();
    let mut out = Tensor::zeros(&[target, dim]);
    let mut mask = vec![false; target];
    if raw >= target {
        for (i, m) in mask.iter_mut().enumerate() {
            let src = i * raw / target;
            out.row_mut(i).copy_from_slice(seq.values().row(src));
            *m = true;
        }
    } else {
        out.data_mut()[..raw * dim].copy_from_slice(seq.values().data());
        mask[..raw].fill(true);
    }
    Ok((out, mask))
}
