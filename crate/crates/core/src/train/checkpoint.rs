use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::model::{Branch, BranchModel, ModelConfig};
use crate::real::Real;

use super::{format_log, parse_log};
use super::{AdamState, EpochRecord, PlateauScheduler, TrainConfig, TrainError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EMIC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to rebuild a model or continue training it.
///
/// Batch order is a pure function of `(train_config.seed, epoch)`, so the
/// seed and epoch count are the complete shuffler state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub branch: Branch,
    /// Completed epochs.
    pub epoch: usize,
    pub params: Vec<(String, Tensor<T>)>,
    pub adam: AdamState<T>,
    pub scheduler: PlateauScheduler,
    pub log: Vec<EpochRecord>,
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn put_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn tensor_blob<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.rank() + t.numel() * T::BYTES);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_tensor<T: Real>(blob: &[u8]) -> Result<Tensor<T>, TrainError> {
    let mut r = Reader { bytes: blob, at: 0 };
    let rank = r.u32()? as usize;
    let shape = (0..rank)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let n: usize = shape.iter().product();
    let body = r.take(n * T::BYTES)?;
    if r.at != blob.len() {
        return Err(bad("tensor blob has trailing bytes"));
    }
    let data = body.chunks_exact(T::BYTES).map(T::read_le).collect();
    Ok(Tensor::new(&shape, data)?)
}

fn key_values(text: &str) -> HashMap<&str, &str> {
    text.lines().filter_map(|l| l.split_once('=')).collect()
}

fn field<V: std::str::FromStr>(kv: &HashMap<&str, &str>, key: &str) -> Result<V, TrainError> {
    kv.get(key)
        .ok_or_else(|| bad(format!("missing {key}")))?
        .parse()
        .map_err(|_| bad(format!("bad value for {key}")))
}

fn utf8(bytes: &[u8]) -> Result<&str, TrainError> {
    std::str::from_utf8(bytes).map_err(|_| bad("section is not UTF-8"))
}

impl<T: Real> Checkpoint<T> {
    /// Rebuilds the model from the saved configuration and parameters.
    pub fn model(&self) -> Result<BranchModel<T>, TrainError> {
        Ok(BranchModel::with_params(
            &self.model_config,
            self.branch,
            self.params.clone(),
        )?)
    }

    /// Validation mean ρ at the last logged epoch.
    pub fn last_val_rho(&self) -> Option<f64> {
        self.log.last().map(|r| r.val_mean_rho)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(String, Vec<u8>)> = vec![
            (
                "model_config".into(),
                self.model_config.to_toml().into_bytes(),
            ),
            (
                "train_config".into(),
                self.train_config.to_toml().into_bytes(),
            ),
            (
                "meta".into(),
                format!("branch={}\nepoch={}\n", self.branch, self.epoch).into_bytes(),
            ),
            (
                "scheduler".into(),
                format!(
                    "lr={:?}\npatience={}\nfactor={:?}\nbest={}\nsince_improvement={}\n",
                    self.scheduler.lr,
                    self.scheduler.patience,
                    self.scheduler.factor,
                    self.scheduler
                        .best
                        .map_or("none".to_string(), |b| format!("{b:?}")),
                    self.scheduler.since_improvement
                )
                .into_bytes(),
            ),
            ("log".into(), format_log(&self.log).into_bytes()),
            ("adam".into(), self.adam.t.to_le_bytes().to_vec()),
        ];
        for (name, value) in &self.params {
            sections.push((format!("param/{name}"), tensor_blob(value)));
        }
        for ((name, _), (m, v)) in self.params.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            sections.push((format!("adam.m/{name}"), tensor_blob(m)));
            sections.push((format!("adam.v/{name}"), tensor_blob(v)));
        }

        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::DTYPE);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (name, payload) in &sections {
            put_section(&mut out, name, payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header = r.take(4)?;
        if header[0] != T::DTYPE {
            return Err(bad(format!(
                "stored as {}-byte floats, requested {}-byte",
                header[0],
                T::BYTES
            )));
        }
        let count = r.u32()? as usize;
        let mut sections: Vec<(&str, &[u8])> = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = utf8(r.take(name_len)?)?;
            let len = usize::try_from(r.u64()?).map_err(|_| bad("section too large"))?;
            sections.push((name, r.take(len)?));
        }
        if r.at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let find = |name: &str| {
            sections
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, p)| *p)
                .ok_or_else(|| bad(format!("missing section {name}")))
        };

        let model_config = ModelConfig::from_toml(utf8(find("model_config")?)?)?;
        let train_config: TrainConfig = toml::from_str(utf8(find("train_config")?)?)
            .map_err(|e| bad(format!("train_config: {e}")))?;
        let meta = key_values(utf8(find("meta")?)?);
        let branch: Branch = field(&meta, "branch")?;
        let epoch: usize = field(&meta, "epoch")?;
        let sched = key_values(utf8(find("scheduler")?)?);
        let best = match sched.get("best") {
            Some(&"none") => None,
            _ => Some(field(&sched, "best")?),
        };
        let scheduler = PlateauScheduler {
            lr: field(&sched, "lr")?,
            patience: field(&sched, "patience")?,
            factor: field(&sched, "factor")?,
            best,
            since_improvement: field(&sched, "since_improvement")?,
        };
        let log = parse_log(utf8(find("log")?)?).map_err(|e| bad(format!("log: {e}")))?;
        let t_bytes: [u8; 8] = find("adam")?
            .try_into()
            .map_err(|_| bad("adam section must be 8 bytes"))?;

        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, payload) in &sections {
            if let Some(p) = name.strip_prefix("param/") {
                params.push((p.to_string(), read_tensor(payload)?));
                m.push(read_tensor(find(&format!("adam.m/{p}"))?)?);
                v.push(read_tensor(find(&format!("adam.v/{p}"))?)?);
            }
        }
        Ok(Self {
            model_config,
            train_config,
            branch,
            epoch,
            params,
            adam: AdamState {
                t: u64::from_le_bytes(t_bytes),
                m,
                v,
            },
            scheduler,
            log,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
