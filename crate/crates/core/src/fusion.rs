//! Late fusion of per-branch predictions and the prediction CSV format.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::data::EMOTIONS;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("sample ids differ between inputs: {}", .0.join(", "))]
    IdMismatch(Vec<String>),
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("non-finite prediction for {0}")]
    NonFinite(String),
    #[error("fusion weights must be non-negative and sum to 1, got {0} and {1}")]
    Weights(f64, f64),
    #[error("prediction file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Visual,
    Audio,
    Fused,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Visual => "visual",
            Source::Audio => "audio",
            Source::Fused => "fused",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "visual" => Ok(Source::Visual),
            "audio" => Ok(Source::Audio),
            "fused" => Ok(Source::Fused),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub source: Source,
    pub values: [f64; 6],
}

fn index_unique(
    records: &[PredictionRecord],
) -> Result<HashMap<&str, &PredictionRecord>, FusionError> {
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite(r.sample_id.clone()));
        }
        if map.insert(r.sample_id.as_str(), r).is_some() {
            return Err(FusionError::DuplicateId(r.sample_id.clone()));
        }
    }
    Ok(map)
}

/// Elementwise mean of two prediction sets, in `visual` order.
pub fn late_fuse(
    visual: &[PredictionRecord],
    audio: &[PredictionRecord],
) -> Result<Vec<PredictionRecord>, FusionError> {
    fuse_with(visual, audio, |a, b| (a + b) / 2.0)
}

/// `w_visual · F_v + w_audio · F_a` with weights summing to 1.
pub fn weighted_fuse(
    visual: &[PredictionRecord],
    audio: &[PredictionRecord],
    w_visual: f64,
    w_audio: f64,
) -> Result<Vec<PredictionRecord>, FusionError> {
    if w_visual < 0.0 || w_audio < 0.0 || ((w_visual + w_audio) - 1.0).abs() > 1e-9 {
        return Err(FusionError::Weights(w_visual, w_audio));
    }
    fuse_with(visual, audio, |a, b| w_visual * a + w_audio * b)
}

fn fuse_with(
    visual: &[PredictionRecord],
    audio: &[PredictionRecord],
    combine: impl Fn(f64, f64) -> f64,
) -> Result<Vec<PredictionRecord>, FusionError> {
    let v = index_unique(visual)?;
    let a = index_unique(audio)?;
    let vk: BTreeSet<&str> = v.keys().copied().collect();
    let ak: BTreeSet<&str> = a.keys().copied().collect();
    let diff: Vec<String> = vk
        .symmetric_difference(&ak)
        .map(|s| s.to_string())
        .collect();
    if !diff.is_empty() {
        return Err(FusionError::IdMismatch(diff));
    }
    Ok(visual
        .iter()
        .map(|r| {
            let other = a[r.sample_id.as_str()];
            PredictionRecord {
                sample_id: r.sample_id.clone(),
                source: Source::Fused,
                values: std::array::from_fn(|k| combine(r.values[k], other.values[k])),
            }
        })
        .collect())
}

/// CSV with a `# source=<name>` first line and one row per sample.
pub fn format_predictions(source: Source, records: &[PredictionRecord]) -> String {
    let mut s = format!("# source={source}\nsample_id,{}\n", EMOTIONS.join(","));
    for r in records {
        s.push_str(&r.sample_id);
        for v in r.values {
            write!(s, ",{v:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn parse_predictions(text: &str) -> Result<(Source, Vec<PredictionRecord>), FusionError> {
    let bad = |line: usize, message: String| FusionError::Parse { line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let source = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("# source=")
            .ok_or_else(|| bad(1, "expected `# source=<modality>`".into()))?
            .trim()
            .parse()
            .map_err(|e| bad(1, e))?,
        None => return Err(bad(1, "empty file".into())),
    };
    let header = format!("sample_id,{}", EMOTIONS.join(","));
    match lines.next() {
        Some((_, l)) if l == header => {}
        _ => return Err(bad(2, format!("header must be {header}"))),
    }
    let mut records = Vec::new();
    for (line, l) in lines {
        if l.is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(
                line,
                format!("expected 7 fields, got {}", fields.len()),
            ));
        }
        let mut values = [0.0; 6];
        for (k, v) in values.iter_mut().enumerate() {
            *v = fields[k + 1]
                .parse()
                .map_err(|_| bad(line, format!("not a number: {:?}", fields[k + 1])))?;
        }
        records.push(PredictionRecord {
            sample_id: fields[0].to_string(),
            source,
            values,
        });
    }
    Ok((source, records))
}

pub fn write_predictions(
    path: impl AsRef<Path>,
    source: Source,
    records: &[PredictionRecord],
) -> Result<(), FusionError> {
    let path = path.as_ref();
    fs::write(path, format_predictions(source, records)).map_err(|source| FusionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_predictions(
    path: impl AsRef<Path>,
) -> Result<(Source, Vec<PredictionRecord>), FusionError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| FusionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_predictions(&text)
}
