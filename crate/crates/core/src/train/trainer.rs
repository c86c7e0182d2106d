use std::fmt::Write as _;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::SplitData;
use crate::metrics::{mean_rho, EvalReport};
use crate::model::{BranchInput, BranchModel};
use crate::real::Real;

use super::{mse_loss, Adam, Checkpoint, PlateauScheduler, TrainConfig, TrainError};

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,val_mean_rho,lr";

/// One line of the epoch log. `lr` is the rate used during the epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mean_rho: f64,
    pub lr: f64,
}

/// Renders records as CSV under [`EPOCH_LOG_HEADER`].
pub fn format_log(records: &[EpochRecord]) -> String {
    let mut s = format!("{EPOCH_LOG_HEADER}\n");
    for r in records {
        writeln!(
            s,
            "{},{:?},{:?},{:?}",
            r.epoch, r.train_loss, r.val_mean_rho, r.lr
        )
        .unwrap();
    }
    s
}

pub fn parse_log(text: &str) -> Result<Vec<EpochRecord>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(EPOCH_LOG_HEADER) {
        return Err("missing header".into());
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64, String> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| format!("bad line {line:?}"))
            };
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| format!("bad line {line:?}"))?,
                train_loss: num(1)?,
                val_mean_rho: num(2)?,
                lr: num(3)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopReason {
    MaxEpochs,
    /// The learning rate fell below `min_lr`.
    LrFloor,
    /// A loss or prediction became non-finite; state was rolled back to the
    /// end of the previous epoch.
    NonFinite {
        epoch: usize,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// State after the epoch with the highest validation mean ρ.
    pub best: Checkpoint<T>,
    /// State after the last good epoch.
    pub last: Checkpoint<T>,
    pub log: Vec<EpochRecord>,
    pub stop: StopReason,
}

struct Prepared<T> {
    inputs: Vec<BranchInput<T>>,
    labels: Vec<[f64; 6]>,
}

impl<T: Real> Prepared<T> {
    fn new(model: &BranchModel<T>, data: &SplitData) -> Result<Self, TrainError> {
        let inputs = data
            .samples
            .iter()
            .map(|s| s.branch_input(model.branch()))
            .collect::<Result<_, _>>()?;
        let labels = data.samples.iter().map(|s| *s.labels.values()).collect();
        Ok(Self { inputs, labels })
    }
}

/// Predictions for every sample of `data`, in sample order.
pub fn predict_split<T: Real>(
    model: &BranchModel<T>,
    data: &SplitData,
) -> Result<Vec<[f64; 6]>, TrainError> {
    predict_prepared(model, &Prepared::new(model, data)?.inputs)
}

fn predict_prepared<T: Real>(
    model: &BranchModel<T>,
    inputs: &[BranchInput<T>],
) -> Result<Vec<[f64; 6]>, TrainError> {
    inputs
        .iter()
        .map(|input| {
            let y = model.predict(input)?;
            Ok(std::array::from_fn(|k| y.data()[k].as_f64()))
        })
        .collect()
}

/// Validation report for `model` on `data`.
pub fn evaluate<T: Real>(
    model: &BranchModel<T>,
    data: &SplitData,
) -> Result<EvalReport, TrainError> {
    let prepared = Prepared::new(model, data)?;
    let preds = predict_prepared(model, &prepared.inputs)?;
    Ok(mean_rho(&prepared.labels, &preds)?)
}

enum EpochStep {
    Done(EpochRecord),
    Diverged,
}

/// Owns a model and its optimizer state across epochs.
pub struct Trainer<T> {
    model: BranchModel<T>,
    config: TrainConfig,
    adam: Adam<T>,
    scheduler: PlateauScheduler,
    epoch: usize,
    log: Vec<EpochRecord>,
    best: Option<Checkpoint<T>>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: BranchModel<T>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = Adam::new(
            model.params().values(),
            config.beta1,
            config.beta2,
            config.eps,
        );
        let scheduler = PlateauScheduler::new(config.lr, config.patience, config.factor);
        Ok(Self {
            model,
            config,
            adam,
            scheduler,
            epoch: 0,
            log: Vec::new(),
            best: None,
        })
    }

    /// Continues from a saved state. `best` is the best-so-far checkpoint, if any.
    pub fn resume(last: Checkpoint<T>, best: Option<Checkpoint<T>>) -> Result<Self, TrainError> {
        let model = last.model()?;
        let config = last.train_config.clone();
        config.validate()?;
        if last.adam.m.len() != model.params().len() {
            return Err(TrainError::Checkpoint(
                "optimizer state does not match parameters".into(),
            ));
        }
        Ok(Self {
            model,
            adam: Adam {
                beta1: config.beta1,
                beta2: config.beta2,
                eps: config.eps,
                state: last.adam,
            },
            config,
            scheduler: last.scheduler,
            epoch: last.epoch,
            log: last.log,
            best,
        })
    }

    pub fn model(&self) -> &BranchModel<T> {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr
    }

    pub fn log(&self) -> &[EpochRecord] {
        &self.log
    }

    pub fn best(&self) -> Option<&Checkpoint<T>> {
        self.best.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model_config: self.model.config().clone(),
            train_config: self.config.clone(),
            branch: self.model.branch(),
            epoch: self.epoch,
            params: self
                .model
                .params()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            adam: self.adam.state.clone(),
            scheduler: self.scheduler.clone(),
            log: self.log.clone(),
        }
    }

    /// Why training should stop now, if it should.
    pub fn stop_reason(&self) -> Option<StopReason> {
        if self.epoch >= self.config.max_epochs {
            Some(StopReason::MaxEpochs)
        } else if self.scheduler.lr < self.config.min_lr {
            Some(StopReason::LrFloor)
        } else {
            None
        }
    }

    /// Runs one epoch. Returns `None` if the loss diverged, in which case the
    /// trainer is left exactly as it was before the call.
    pub fn run_epoch(
        &mut self,
        train: &SplitData,
        val: &SplitData,
    ) -> Result<Option<EpochRecord>, TrainError> {
        let train_p = Prepared::new(&self.model, train)?;
        let val_p = Prepared::new(&self.model, val)?;
        Ok(match self.epoch_prepared(train, &train_p, &val_p)? {
            EpochStep::Done(r) => Some(r),
            EpochStep::Diverged => None,
        })
    }

    fn epoch_prepared(
        &mut self,
        train: &SplitData,
        train_p: &Prepared<T>,
        val_p: &Prepared<T>,
    ) -> Result<EpochStep, TrainError> {
        let saved_params = self.model.params().values().to_vec();
        let saved_adam = self.adam.state.clone();
        let rollback = |this: &mut Self| {
            this.model
                .params_mut()
                .values_mut()
                .clone_from_slice(&saved_params);
            this.adam.state = saved_adam.clone();
        };

        let lr = self.scheduler.lr;
        let order = train.order(self.config.seed, self.epoch as u64);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let tape = Tape::new();
            let bound = self.model.params().bind(&tape, true);
            let preds = chunk
                .iter()
                .map(|&i| self.model.forward(&bound, &train_p.inputs[i]))
                .collect::<Result<Vec<_>, _>>()?;
            let pred = Var::stack_rows(&preds)?;
            let target: Vec<T> = chunk
                .iter()
                .flat_map(|&i| train_p.labels[i].map(T::from_f64))
                .collect();
            let target = Tensor::new(&[chunk.len(), 6], target)?;
            let loss = mse_loss(pred, &target)?;
            let value = loss.value().data()[0].as_f64();
            if !value.is_finite() {
                rollback(self);
                return Ok(EpochStep::Diverged);
            }
            loss_sum += value * chunk.len() as f64;
            tape.backward(loss)?;
            let grads = bound.grads();
            drop(bound);
            if let Err(e) = self
                .adam
                .step(self.model.params_mut().values_mut(), &grads, lr)
            {
                rollback(self);
                return Err(e);
            }
        }

        let preds = predict_prepared(&self.model, &val_p.inputs)?;
        if preds.iter().flatten().any(|v| !v.is_finite()) {
            rollback(self);
            return Ok(EpochStep::Diverged);
        }
        let report = mean_rho(&val_p.labels, &preds)?;
        self.epoch += 1;
        let record = EpochRecord {
            epoch: self.epoch,
            train_loss: loss_sum / order.len() as f64,
            val_mean_rho: report.mean_rho,
            lr,
        };
        self.log.push(record);
        if self.scheduler.update(report.mean_rho) {
            self.best = Some(self.checkpoint());
        }
        Ok(EpochStep::Done(record))
    }

    pub fn run(self, train: &SplitData, val: &SplitData) -> Result<TrainOutcome<T>, TrainError> {
        self.run_with(train, val, |_, _| Ok(()))
    }

    /// Trains until a stop condition, calling `on_epoch` after each completed epoch.
    pub fn run_with(
        mut self,
        train: &SplitData,
        val: &SplitData,
        mut on_epoch: impl FnMut(&Self, &EpochRecord) -> Result<(), TrainError>,
    ) -> Result<TrainOutcome<T>, TrainError> {
        let train_p = Prepared::new(&self.model, train)?;
        let val_p = Prepared::new(&self.model, val)?;
        let stop = loop {
            if let Some(reason) = self.stop_reason() {
                break reason;
            }
            match self.epoch_prepared(train, &train_p, &val_p)? {
                EpochStep::Done(record) => on_epoch(&self, &record)?,
                EpochStep::Diverged => {
                    break StopReason::NonFinite {
                        epoch: self.epoch + 1,
                    }
                }
            }
        };
        let last = self.checkpoint();
        Ok(TrainOutcome {
            best: self.best.unwrap_or_else(|| last.clone()),
            log: self.log,
            last,
            stop,
        })
    }
}

/// Trains a fresh model from scratch; see [`Trainer`].
pub fn train_branch<T: Real>(
    model: BranchModel<T>,
    train: &SplitData,
    val: &SplitData,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    Trainer::new(model, config.clone())?.run(train, val)
}
