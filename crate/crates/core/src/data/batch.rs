use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::model::{concat_visual_channels, Branch, BranchInput, ModelError};
use crate::real::Real;

use super::{
    normalize_length, read_feature_file, DataError, LabelVector, Manifest, Modality, Split,
};

/// One sample with every modality normalized to its fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub labels: LabelVector,
    /// `[T_v, 512]`
    pub resnet: Tensor<f32>,
    /// `[T_v, 34]`
    pub aus: Tensor<f32>,
    pub visual_mask: Vec<bool>,
    /// `[T_a, 768]`
    pub audio: Tensor<f32>,
    pub audio_mask: Vec<bool>,
}

impl Sample {
    /// Model input for one branch; the visual branch concatenates ResNet and AU channels.
    pub fn branch_input<T: Real>(&self, branch: Branch) -> Result<BranchInput<T>, ModelError> {
        Ok(match branch {
            Branch::Visual => BranchInput {
                branch,
                values: concat_visual_channels(&self.resnet.cast(), &self.aus.cast())?,
                mask: self.visual_mask.clone(),
            },
            Branch::Audio => BranchInput {
                branch,
                values: self.audio.cast(),
                mask: self.audio_mask.clone(),
            },
        })
    }
}

/// All samples of one split, loaded and normalized, in manifest order.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl SplitData {
    pub fn load(
        manifest: &Manifest,
        split: Split,
        visual_len: usize,
        audio_len: usize,
    ) -> Result<Self, DataError> {
        let rows = manifest.split(split);
        if rows.is_empty() {
            return Err(DataError::EmptySplit(split));
        }
        let mut samples = Vec::with_capacity(rows.len());
        for row in rows {
            let read = |path, modality: Modality| {
                let mut seq = read_feature_file(manifest.resolve(path))?;
                if seq.modality != modality {
                    return Err(DataError::DimMismatch {
                        modality,
                        expected: modality.dim(),
                        found: seq.dim(),
                    });
                }
                seq.sample_id = row.sample_id.clone();
                Ok(seq)
            };
            let resnet = read(&row.visual_resnet_path, Modality::VisualResnet)?;
            let aus = read(&row.visual_aus_path, Modality::VisualAus)?;
            let audio = read(&row.audio_path, Modality::AudioW2v)?;
            if resnet.len() != aus.len() {
                return Err(DataError::Alignment {
                    sample_id: row.sample_id.clone(),
                    resnet: resnet.len(),
                    aus: aus.len(),
                });
            }
            let (resnet, visual_mask) = normalize_length(&resnet, visual_len)?;
            let (aus, _) = normalize_length(&aus, visual_len)?;
            let (audio, audio_mask) = normalize_length(&audio, audio_len)?;
            samples.push(Sample {
                sample_id: row.sample_id.clone(),
                labels: row.labels,
                resnet,
                aus,
                visual_mask,
                audio,
                audio_mask,
            });
        }
        Ok(Self { split, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Visiting order for one epoch: shuffled for train, manifest order otherwise.
    pub fn order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        match self.split {
            Split::Train => shuffle_order(self.len(), seed, epoch),
            _ => (0..self.len()).collect(),
        }
    }

    /// Partitions the epoch order into batches; the last one may be short.
    pub fn batches(
        &self,
        batch_size: usize,
        seed: u64,
        epoch: u64,
    ) -> Result<Vec<Batch>, DataError> {
        if batch_size == 0 {
            return Err(DataError::ZeroBatch);
        }
        let order = self.order(seed, epoch);
        Ok(order
            .chunks(batch_size)
            .map(|idx| Batch::collate(idx.iter().map(|&i| &self.samples[i])))
            .collect())
    }
}

/// Seeded permutation of `0..n`, a pure function of `(n, seed, epoch)`.
pub fn shuffle_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Loads a split and returns its epoch-0 batches.
pub fn make_batches(
    manifest: &Manifest,
    split: Split,
    batch_size: usize,
    seed: u64,
    visual_len: usize,
    audio_len: usize,
) -> Result<Vec<Batch>, DataError> {
    SplitData::load(manifest, split, visual_len, audio_len)?.batches(batch_size, seed, 0)
}

/// `B` equal-length sequences of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedSequences {
    /// `[B, T, dim]`, zero where masked
    pub values: Tensor<f32>,
    /// row-major `[B, T]`
    pub mask: Vec<bool>,
}

impl PaddedSequences {
    fn stack<'a>(items: impl Iterator<Item = (&'a Tensor<f32>, &'a [bool])>) -> Self {
        let mut data = Vec::new();
        let mut mask = Vec::new();
        let mut b = 0;
        let mut inner = [0, 0];
        for (x, m) in items {
            inner = [x.shape()[0], x.shape()[1]];
            data.extend_from_slice(x.data());
            mask.extend_from_slice(m);
            b += 1;
        }
        Self {
            values: Tensor::new(&[b, inner[0], inner[1]], data).expect("equal shapes"),
            mask,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn mask_row(&self, b: usize) -> &[bool] {
        let t = self.seq_len();
        &self.mask[b * t..(b + 1) * t]
    }

    /// `[T, dim]` slice of one sample.
    pub fn sample(&self, b: usize) -> Tensor<f32> {
        let (t, d) = (self.seq_len(), self.values.shape()[2]);
        Tensor::new(
            &[t, d],
            self.values.data()[b * t * d..(b + 1) * t * d].to_vec(),
        )
        .expect("slice of a [B, T, dim] tensor")
    }
}

/// Immutable training unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub sample_ids: Vec<String>,
    pub resnet: PaddedSequences,
    pub aus: PaddedSequences,
    pub audio: PaddedSequences,
    /// `[B, 6]`
    pub labels: Tensor<f64>,
}

impl Batch {
    fn collate<'a>(samples: impl Iterator<Item = &'a Sample> + Clone) -> Self {
        let sample_ids = samples
            .clone()
            .map(|s| s.sample_id.clone())
            .collect::<Vec<_>>();
        let labels: Vec<f64> = samples.clone().flat_map(|s| *s.labels.values()).collect();
        Self {
            labels: Tensor::new(&[sample_ids.len(), 6], labels).expect("six labels per sample"),
            sample_ids,
            resnet: PaddedSequences::stack(
                samples.clone().map(|s| (&s.resnet, &s.visual_mask[..])),
            ),
            aus: PaddedSequences::stack(samples.clone().map(|s| (&s.aus, &s.visual_mask[..]))),
            audio: PaddedSequences::stack(samples.map(|s| (&s.audio, &s.audio_mask[..]))),
        }
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn label_row(&self, b: usize) -> &[f64] {
        self.labels.row(b)
    }

    /// Per-sample model inputs for one branch.
    pub fn branch_inputs<T: Real>(
        &self,
        branch: Branch,
    ) -> Result<Vec<BranchInput<T>>, ModelError> {
        (0..self.len())
            .map(|b| {
                Ok(match branch {
                    Branch::Visual => BranchInput {
                        branch,
                        values: concat_visual_channels(
                            &self.resnet.sample(b).cast(),
                            &self.aus.sample(b).cast(),
                        )?,
                        mask: self.resnet.mask_row(b).to_vec(),
                    },
                    Branch::Audio => BranchInput {
                        branch,
                        values: self.audio.sample(b).cast(),
                        mask: self.audio.mask_row(b).to_vec(),
                    },
                })
            })
            .collect()
    }
}
