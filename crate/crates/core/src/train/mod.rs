//! MSE training with Adam, plateau learning-rate halving on validation mean
//! ρ, best-model selection and resumable checkpoints.

mod adam;
mod checkpoint;
mod scheduler;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError, Var};
use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::real::Real;

pub use adam::{Adam, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use scheduler::PlateauScheduler;
pub use trainer::{
    evaluate, format_log, parse_log, predict_split, train_branch, EpochRecord, StopReason,
    TrainOutcome, Trainer, EPOCH_LOG_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter {index} at element {element}")]
    NonFiniteGradient { index: usize, element: usize },
    #[error("{params} parameters but {grads} gradients")]
    GradientCount { params: usize, grads: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Optimization hyperparameters. Unknown keys are rejected when parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before the rate is multiplied by `factor`.
    pub patience: usize,
    pub factor: f64,
    /// Training stops once the rate falls below this.
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// lr 3e-5, batch 128, halving after 10 flat epochs.
    pub fn paper() -> Self {
        Self {
            lr: 3e-5,
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            factor: 0.5,
            min_lr: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }

    /// Settings for the small synthetic datasets.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 8,
            max_epochs: 200,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return fail("factor must lie in (0, 1)");
        }
        if self.patience == 0 {
            return fail("patience must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return fail("eps must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Mean of `(pred − target)²` over every cell.
pub fn mse_loss<'t, T: Real>(
    pred: Var<'t, T>,
    target: &Tensor<T>,
) -> Result<Var<'t, T>, TensorError> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "mse_loss",
            lhs: pred.shape(),
            rhs: target.shape().to_vec(),
        });
    }
    let target = pred.tape().constant(target.clone());
    let diff = pred.sub(target)?;
    Ok(diff.mul(diff)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn loss_is_zero_at_target() {
        let tape = Tape::<f64>::new();
        let t = Tensor::new(&[2, 6], (0..12).map(f64::from).collect()).unwrap();
        let p = tape.param(t.clone());
        let loss = mse_loss(p, &t).unwrap();
        assert_eq!(loss.value().data(), &[0.0]);
        tape.backward(loss).unwrap();
        assert!(p.grad().unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_unit_deviation() {
        let tape = Tape::<f64>::new();
        let p = tape.param(Tensor::new(&[1, 6], vec![1., 0., 0., 0., 0., 0.]).unwrap());
        let loss = mse_loss(p, &Tensor::zeros(&[1, 6])).unwrap();
        assert!((loss.value().data()[0] - 1.0 / 6.0).abs() < 1e-15);
        tape.backward(loss).unwrap();
        let g = p.grad().unwrap();
        assert!((g.data()[0] - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(&g.data()[1..], &[0.0; 5]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let tape = Tape::<f64>::new();
        let p = tape.param(Tensor::zeros(&[2, 6]));
        assert!(mse_loss(p, &Tensor::zeros(&[1, 6])).is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = TrainConfig::desk();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(TrainConfig::from_toml("lr = 0.1\nmomentum = 0.9\n").is_err());
    }
}
