//! Empirical coverage rate (ECR) and average prediction set size (APSS).

use serde::{Deserialize, Serialize};

use crate::data::{Label, PredictionSet, RiskLevel};
use crate::error::{Error, Result};

/// Fraction of samples whose true label lies in its prediction set.
pub fn ecr(sets: &[PredictionSet], labels: &[Label]) -> Result<f64> {
    if sets.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: sets.len(),
            right: labels.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::Empty("prediction sets"));
    }
    let covered = sets.iter().zip(labels).filter(|(s, &l)| s.contains(l)).count();
    Ok(covered as f64 / sets.len() as f64)
}

/// Mean prediction set cardinality.
pub fn apss(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::Empty("prediction sets"));
    }
    let total: usize = sets.iter().map(PredictionSet::len).sum();
    Ok(total as f64 / sets.len() as f64)
}

/// Metrics of one trial at one risk level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub ecr: f64,
    pub apss: f64,
    pub n_test: usize,
    pub alpha: RiskLevel,
}

impl TrialMetrics {
    pub fn evaluate(sets: &[PredictionSet], labels: &[Label], alpha: RiskLevel) -> Result<Self> {
        Ok(Self {
            ecr: ecr(sets, labels)?,
            apss: apss(sets)?,
            n_test: sets.len(),
            alpha,
        })
    }
}

/// Means and sample standard deviations across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mean_ecr: f64,
    pub sd_ecr: f64,
    pub mean_apss: f64,
    pub sd_apss: f64,
    pub trials: usize,
}

/// Sample mean and standard deviation (denominator `n - 1`, zero for one value).
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

pub fn aggregate(trials: &[TrialMetrics]) -> Result<AggregateMetrics> {
    if trials.is_empty() {
        return Err(Error::Empty("trials"));
    }
    let ecrs: Vec<f64> = trials.iter().map(|t| t.ecr).collect();
    let sizes: Vec<f64> = trials.iter().map(|t| t.apss).collect();
    let (mean_ecr, sd_ecr) = mean_sd(&ecrs)?;
    let (mean_apss, sd_apss) = mean_sd(&sizes)?;
    Ok(AggregateMetrics {
        mean_ecr,
        sd_ecr,
        mean_apss,
        sd_apss,
        trials: trials.len(),
    })
}
