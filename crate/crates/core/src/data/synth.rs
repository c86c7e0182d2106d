use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;

use super::{
    write_feature_file, DataError, FeatureSequence, LabelVector, Manifest, ManifestRow, Modality,
    Split,
};

const LATENT_DIM: usize = 4;
const FRAME_JITTER: f64 = 0.5;
const FEATURE_NOISE: f64 = 0.5;

/// Parameters of the synthetic dataset.
///
/// Each sample draws a latent `z ~ N(0, I_4)`. Every frame of every modality
/// is a fixed random linear image of `z + 0.5·jitter` plus an offset and
/// per-feature noise, so `z` is recoverable from temporal means. Labels are
/// `sigmoid(s·(B z + 0.5·tanh(C z)) + σ·n)` with `σ = 1 − 0.75·s`; at `s = 0`
/// they carry no information about the features.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Planted signal strength in `[0, 1]`.
    pub signal: f64,
    /// Inclusive raw sequence length range, drawn per sample and modality.
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_train: 32,
            n_validation: 16,
            n_test: 16,
            seed: 0,
            signal: 1.0,
            min_len: 16,
            max_len: 64,
        }
    }
}

impl SynthSpec {
    pub fn total(&self) -> usize {
        self.n_train + self.n_validation + self.n_test
    }

    pub fn label_noise(&self) -> f64 {
        1.0 - 0.75 * self.signal
    }
}

struct Loadings {
    a: Vec<f64>,
    offset: Vec<f64>,
}

impl Loadings {
    fn draw(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (LATENT_DIM as f64).sqrt().recip();
        Self {
            a: (0..dim * LATENT_DIM).map(|_| normal(rng) * scale).collect(),
            offset: (0..dim).map(|_| 0.5 * normal(rng)).collect(),
        }
    }

    fn frames(&self, z: &[f64], len: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let dim = self.offset.len();
        let mut data = Vec::with_capacity(len * dim);
        for _ in 0..len {
            let u: Vec<f64> = z
                .iter()
                .map(|&zk| zk + FRAME_JITTER * normal(rng))
                .collect();
            for j in 0..dim {
                let row = &self.a[j * LATENT_DIM..(j + 1) * LATENT_DIM];
                let mean: f64 =
                    row.iter().zip(&u).map(|(a, u)| a * u).sum::<f64>() + self.offset[j];
                data.push((mean + FEATURE_NOISE * normal(rng)) as f32);
            }
        }
        Tensor::new(&[len, dim], data).expect("len × dim values")
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Writes feature files under `out_dir/features/` and `out_dir/manifest.csv`.
///
/// Output bytes depend only on `spec`.
pub fn generate_synthetic_dataset(
    spec: &SynthSpec,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest, DataError> {
    let out_dir = out_dir.as_ref();
    let feature_dir = out_dir.join("features");
    fs::create_dir_all(&feature_dir).map_err(|source| DataError::Io {
        path: feature_dir.clone(),
        source,
    })?;
    let (min_len, max_len) = (spec.min_len.max(1), spec.max_len.max(spec.min_len.max(1)));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let resnet = Loadings::draw(Modality::VisualResnet.dim(), &mut rng);
    let aus = Loadings::draw(Modality::VisualAus.dim(), &mut rng);
    let audio = Loadings::draw(Modality::AudioW2v.dim(), &mut rng);
    let label_scale = (LATENT_DIM as f64).sqrt().recip();
    let b: Vec<f64> = (0..6 * LATENT_DIM)
        .map(|_| normal(&mut rng) * label_scale)
        .collect();
    let c: Vec<f64> = (0..6 * LATENT_DIM)
        .map(|_| normal(&mut rng) * label_scale)
        .collect();
    let dot = |m: &[f64], k: usize, z: &[f64]| -> f64 {
        m[k * LATENT_DIM..(k + 1) * LATENT_DIM]
            .iter()
            .zip(z)
            .map(|(a, b)| a * b)
            .sum()
    };

    let splits = [
        (Split::Train, spec.n_train),
        (Split::Validation, spec.n_validation),
        (Split::Test, spec.n_test),
    ];
    let mut rows = Vec::with_capacity(spec.total());
    let mut index = 0;
    for (split, count) in splits {
        for _ in 0..count {
            let id = format!("s{index:04}");
            index += 1;
            let z: Vec<f64> = (0..LATENT_DIM).map(|_| normal(&mut rng)).collect();
            let mut labels = [0.0; 6];
            for (k, y) in labels.iter_mut().enumerate() {
                let signal = dot(&b, k, &z) + 0.5 * dot(&c, k, &z).tanh();
                *y = sigmoid(spec.signal * signal + spec.label_noise() * normal(&mut rng));
            }
            let visual_len = rng.random_range(min_len..=max_len);
            let audio_len = rng.random_range(min_len..=max_len);
            let files: [(Modality, &Loadings, usize, &str); 3] = [
                (Modality::VisualResnet, &resnet, visual_len, "resnet"),
                (Modality::VisualAus, &aus, visual_len, "aus"),
                (Modality::AudioW2v, &audio, audio_len, "audio"),
            ];
            let mut paths: Vec<PathBuf> = Vec::with_capacity(3);
            for (modality, loadings, len, tag) in files {
                let seq = FeatureSequence::new(&id, modality, loadings.frames(&z, len, &mut rng))?;
                let rel = PathBuf::from("features").join(format!("{id}.{tag}.emif"));
                write_feature_file(&seq, out_dir.join(&rel))?;
                paths.push(rel);
            }
            let [visual_resnet_path, visual_aus_path, audio_path]: [PathBuf; 3] =
                paths.try_into().expect("three modalities");
            rows.push(ManifestRow {
                sample_id: id,
                split,
                visual_resnet_path,
                visual_aus_path,
                audio_path,
                labels: LabelVector::new(labels)?,
            });
        }
    }
    let manifest = Manifest::new(out_dir, rows)?;
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
