//! Evaluation in 64-bit: per-dimension Pearson correlation, its mean over
//! the six emotions, and mean squared error.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::EMOTIONS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("correlation needs at least 2 samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("length mismatch: {left} targets vs {right} predictions")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },
}

/// Result of [`pearson`]. `zero_variance` marks the degenerate case where
/// either input is constant and `rho` is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    pub zero_variance: bool,
}

fn check_pair<A, B>(y: &[A], yhat: &[B]) -> Result<(), MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch {
            left: y.len(),
            right: yhat.len(),
        });
    }
    Ok(())
}

/// Pearson correlation with population moments, clamped to `[-1, 1]`.
pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<Correlation, MetricsError> {
    check_pair(y, yhat)?;
    let n = y.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { n });
    }
    if let Some(index) = y
        .iter()
        .zip(yhat)
        .position(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(MetricsError::NonFinite { index });
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(y) || constant(yhat) {
        return Ok(Correlation {
            rho: 0.0,
            zero_variance: true,
        });
    }
    let nf = n as f64;
    let my = y.iter().sum::<f64>() / nf;
    let mp = yhat.iter().sum::<f64>() / nf;
    let (mut cov, mut vy, mut vp) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mp);
        cov += da * db;
        vy += da * da;
        vp += db * db;
    }
    Ok(Correlation {
        rho: (cov / (vy * vp).sqrt()).clamp(-1.0, 1.0),
        zero_variance: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseReport {
    pub per_dim: [f64; 6],
    /// Mean over all `n × 6` cells.
    pub overall: f64,
}

pub fn mse(y: &[[f64; 6]], yhat: &[[f64; 6]]) -> Result<MseReport, MetricsError> {
    check_pair(y, yhat)?;
    if y.is_empty() {
        return Err(MetricsError::TooFewSamples { n: 0 });
    }
    let mut per_dim = [0.0; 6];
    for (a, b) in y.iter().zip(yhat) {
        for k in 0..6 {
            per_dim[k] += (a[k] - b[k]).powi(2);
        }
    }
    let n = y.len() as f64;
    per_dim.iter_mut().for_each(|v| *v /= n);
    Ok(MseReport {
        per_dim,
        overall: per_dim.iter().sum::<f64>() / 6.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub per_dim_rho: [f64; 6],
    /// Arithmetic mean of `per_dim_rho`.
    pub mean_rho: f64,
    pub per_dim_mse: [f64; 6],
    pub overall_mse: f64,
    pub zero_variance: [bool; 6],
}

/// Per-column Pearson correlations, their mean, and MSE.
pub fn mean_rho(y: &[[f64; 6]], yhat: &[[f64; 6]]) -> Result<EvalReport, MetricsError> {
    check_pair(y, yhat)?;
    let mut per_dim_rho = [0.0; 6];
    let mut zero_variance = [false; 6];
    for k in 0..6 {
        let a: Vec<f64> = y.iter().map(|r| r[k]).collect();
        let b: Vec<f64> = yhat.iter().map(|r| r[k]).collect();
        let c = pearson(&a, &b)?;
        per_dim_rho[k] = c.rho;
        zero_variance[k] = c.zero_variance;
    }
    let errors = mse(y, yhat)?;
    Ok(EvalReport {
        n: y.len(),
        mean_rho: per_dim_rho.iter().sum::<f64>() / 6.0,
        per_dim_rho,
        per_dim_mse: errors.per_dim,
        overall_mse: errors.overall,
        zero_variance,
    })
}

impl EvalReport {
    /// Emotion names whose correlation was forced to 0.
    pub fn warnings(&self) -> Vec<&'static str> {
        EMOTIONS
            .iter()
            .zip(self.zero_variance)
            .filter_map(|(name, flag)| flag.then_some(*name))
            .collect()
    }

    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n={}", self.n).unwrap();
        writeln!(s, "mean_rho={}", self.mean_rho).unwrap();
        writeln!(s, "overall_mse={}", self.overall_mse).unwrap();
        for (k, name) in EMOTIONS.iter().enumerate() {
            writeln!(s, "rho.{name}={}", self.per_dim_rho[k]).unwrap();
        }
        for (k, name) in EMOTIONS.iter().enumerate() {
            writeln!(s, "mse.{name}={}", self.per_dim_mse[k]).unwrap();
        }
        for (k, name) in EMOTIONS.iter().enumerate() {
            writeln!(s, "zero_variance.{name}={}", self.zero_variance[k]).unwrap();
        }
        s
    }

    /// `dimension,rho,mse` with one row per emotion and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dimension,rho,mse\n");
        for (k, name) in EMOTIONS.iter().enumerate() {
            writeln!(s, "{name},{},{}", self.per_dim_rho[k], self.per_dim_mse[k]).unwrap();
        }
        writeln!(s, "mean,{},{}", self.mean_rho, self.overall_mse).unwrap();
        s
    }
}
