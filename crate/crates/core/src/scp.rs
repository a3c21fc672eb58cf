//! Split conformal prediction.
//!
//! Calibration sorts the true-label nonconformity scores `s_i = 1 - p_i(y_i)`
//! and takes the `k*`-th smallest, `k* = ceil((n + 1)(1 - alpha))`. A test
//! label `y` enters the set when `1 - p(y) <= q_hat`. When `k* > n` no finite
//! order statistic exists and the threshold becomes [`Cutoff::FullSet`].

use serde::{Deserialize, Serialize};

use crate::data::{Cutoff, Label, PredictionSet, ProbabilityVector, RiskLevel, ScoreDataset};
use crate::error::{Error, Result};

/// `1 - probs[label]`.
pub fn nonconformity_score(probs: &ProbabilityVector, label: Label) -> f64 {
    1.0 - probs.prob(label)
}

/// The 1-based rank `ceil((n + 1)(1 - alpha))` of the conformal quantile.
///
/// May exceed `n`, in which case no calibration score is large enough.
pub fn conformal_rank(n: usize, alpha: RiskLevel) -> usize {
    let target = (n as f64 + 1.0) * (1.0 - alpha.value());
    // (n + 1)(1 - alpha) is often an integer in exact arithmetic, e.g. 10 * (1 - 0.1);
    // rounding must not push it to the next integer.
    (target - 1e-9).ceil().max(0.0) as usize
}

/// Calibrated split-conformal threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScpThreshold {
    pub q_hat: Cutoff,
    pub n_cal: usize,
    pub alpha: RiskLevel,
}

impl ScpThreshold {
    /// Calibrates directly from true-label nonconformity scores.
    pub fn from_scores(scores: &[f64], alpha: RiskLevel) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("calibration set"));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Ok(Self::from_sorted(&sorted, alpha))
    }

    /// Same as [`ScpThreshold::from_scores`] for scores already in ascending order.
    pub fn from_sorted(sorted: &[f64], alpha: RiskLevel) -> Self {
        let n = sorted.len();
        let k = conformal_rank(n, alpha);
        let q_hat = if k > n {
            Cutoff::FullSet
        } else {
            // k == 0 only for alpha close to 1 with tiny n; the smallest score is
            // then the least conservative valid choice.
            Cutoff::Finite(sorted[k.max(1) - 1])
        };
        Self {
            q_hat,
            n_cal: n,
            alpha,
        }
    }

    pub fn is_full_set(&self) -> bool {
        self.q_hat.is_full_set()
    }

    pub fn predict(&self, probs: &ProbabilityVector) -> PredictionSet {
        predict_set(probs, self)
    }
}

/// Calibrates the split-conformal quantile on `cal`.
pub fn calibrate_quantile(cal: &ScoreDataset, alpha: RiskLevel) -> Result<ScpThreshold> {
    cal.fail_if_empty("calibration set")?;
    ScpThreshold::from_scores(&cal.scores(), alpha)
}

/// `{ y : 1 - probs[y] <= q_hat }`, or every label for a full-set threshold.
pub fn predict_set(probs: &ProbabilityVector, threshold: &ScpThreshold) -> PredictionSet {
    threshold.q_hat.predict(probs)
}
