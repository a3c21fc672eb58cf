//! Risk-controlled conformal prediction.
//!
//! A threshold `beta` indexes the set `C_beta(x) = { y : p(y) >= 1 - beta }`.
//! Calibration picks the smallest `beta` whose certified bound on the
//! expected test loss,
//!
//! ```text
//! (N * L_N(beta) + B) / (N + 1) <= alpha,
//! ```
//!
//! holds, where `L_N` is the mean calibration loss and `B` bounds the loss.
//!
//! For the binary miscoverage loss, `L_N(beta)` is the fraction of
//! calibration scores strictly above `beta`. It is piecewise constant with
//! breakpoints at the calibration scores, so the infimum is attained on the
//! finite grid `{0} ∪ scores ∪ {1}` and the search is exact.
//!
//! Set membership is tested in score space (`1 - p(y) <= beta`). This is the
//! same inequality as `p(y) >= 1 - beta`, but evaluated with the same float
//! expression as the split-conformal rule, so both methods agree bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::data::{Cutoff, Label, PredictionSet, ProbabilityVector, RiskLevel, ScoreDataset};
use crate::error::{Error, Result};

/// Default loss bound for the binary miscoverage loss.
pub const DEFAULT_LOSS_BOUND: f64 = 1.0;

/// Slack on `bound <= alpha`, absorbing rounding in `N * L_N`.
const FEASIBILITY_SLACK: f64 = 1e-12;

/// A loss on prediction sets, taking values in `[0, upper_bound()]`.
///
/// Calibration assumes the loss is non-increasing as the set grows, which
/// makes `L_N(beta)` non-increasing in `beta`.
pub trait SetLoss {
    fn loss(&self, set: &PredictionSet, label: Label) -> f64;
    fn upper_bound(&self) -> f64;
}

/// `1{label ∉ set}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Miscoverage;

impl SetLoss for Miscoverage {
    fn loss(&self, set: &PredictionSet, label: Label) -> f64 {
        miscoverage_loss(set, label)
    }

    fn upper_bound(&self) -> f64 {
        1.0
    }
}

/// Calibrated risk-controlling threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RccpThreshold {
    pub beta_hat: Cutoff,
    pub loss_bound: f64,
    pub n_cal: usize,
    pub alpha: RiskLevel,
    /// Certified bound `(N * L_N(beta_hat) + B) / (N + 1)` at the chosen threshold.
    /// For a full-set threshold this is `B / (N + 1)`, which exceeds `alpha`.
    pub risk_bound: f64,
}

impl RccpThreshold {
    pub fn is_full_set(&self) -> bool {
        self.beta_hat.is_full_set()
    }

    pub fn predict(&self, probs: &ProbabilityVector) -> PredictionSet {
        self.beta_hat.predict(probs)
    }
}

/// `{ y : probs[y] >= 1 - beta }`, evaluated as `1 - probs[y] <= beta`.
pub fn prediction_set_beta(probs: &ProbabilityVector, beta: f64) -> PredictionSet {
    Cutoff::Finite(beta).predict(probs)
}

/// 1 if `label` is missing from `set`, else 0.
pub fn miscoverage_loss(set: &PredictionSet, label: Label) -> f64 {
    if set.contains(label) {
        0.0
    } else {
        1.0
    }
}

/// `(N * L_N + B) / (N + 1)`.
pub fn risk_bound_lhs(empirical_risk: f64, n: usize, loss_bound: f64) -> f64 {
    let n = n as f64;
    (n * empirical_risk + loss_bound) / (n + 1.0)
}

fn feasible(bound: f64, alpha: RiskLevel) -> bool {
    bound <= alpha.value() + FEASIBILITY_SLACK
}

fn check_loss_bound(loss_bound: f64) -> Result<()> {
    if loss_bound.is_finite() && loss_bound >= 0.0 {
        Ok(())
    } else {
        Err(Error::param("loss bound", format!("must be finite and >= 0, got {loss_bound}")))
    }
}

/// Mean miscoverage of the `beta`-indexed sets over `cal`.
pub fn empirical_risk(cal: &ScoreDataset, beta: f64) -> Result<f64> {
    empirical_risk_with(cal, beta, &Miscoverage)
}

/// Mean `loss` of the `beta`-indexed sets over `cal`.
pub fn empirical_risk_with<L: SetLoss + ?Sized>(cal: &ScoreDataset, beta: f64, loss: &L) -> Result<f64> {
    cal.fail_if_empty("calibration set")?;
    let total: f64 = cal
        .iter()
        .map(|ex| loss.loss(&prediction_set_beta(&ex.probs, beta), ex.label))
        .sum();
    Ok(total / cal.len() as f64)
}

/// Fraction of `scores` strictly greater than `beta`.
pub fn empirical_risk_from_scores(scores: &[f64], beta: f64) -> f64 {
    scores.iter().filter(|&&s| s > beta).count() as f64 / scores.len() as f64
}

/// Candidate thresholds `{0} ∪ scores ∪ {1}`, ascending and deduplicated.
pub fn candidate_grid(scores: &[f64]) -> Vec<f64> {
    let mut grid = Vec::with_capacity(scores.len() + 2);
    grid.push(0.0);
    grid.extend_from_slice(scores);
    grid.push(1.0);
    grid.sort_unstable_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Calibrates `beta_hat` for the miscoverage loss with bound `loss_bound`.
///
/// Sorts once and sweeps the candidate grid with a running count, so the
/// cost is `O(N log N)`. Returns a full-set threshold when even `beta = 1`
/// is infeasible, i.e. `B / (N + 1) > alpha`.
pub fn calibrate_beta(cal: &ScoreDataset, alpha: RiskLevel, loss_bound: f64) -> Result<RccpThreshold> {
    cal.fail_if_empty("calibration set")?;
    calibrate_beta_from_scores(&cal.scores(), alpha, loss_bound)
}

/// [`calibrate_beta`] on raw true-label scores.
pub fn calibrate_beta_from_scores(scores: &[f64], alpha: RiskLevel, loss_bound: f64) -> Result<RccpThreshold> {
    if scores.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    check_loss_bound(loss_bound)?;
    let n = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);

    let mut at_or_below = 0;
    for candidate in candidate_grid(&sorted) {
        while at_or_below < n && sorted[at_or_below] <= candidate {
            at_or_below += 1;
        }
        let risk = (n - at_or_below) as f64 / n as f64;
        let bound = risk_bound_lhs(risk, n, loss_bound);
        if feasible(bound, alpha) {
            return Ok(RccpThreshold {
                beta_hat: Cutoff::Finite(candidate),
                loss_bound,
                n_cal: n,
                alpha,
                risk_bound: bound,
            });
        }
    }
    Ok(full_set(n, alpha, loss_bound))
}

fn full_set(n: usize, alpha: RiskLevel, loss_bound: f64) -> RccpThreshold {
    log::warn!(
        "risk level {} is infeasible with {} calibration points and loss bound {}; emitting full sets",
        alpha.value(),
        n,
        loss_bound
    );
    RccpThreshold {
        beta_hat: Cutoff::FullSet,
        loss_bound,
        n_cal: n,
        alpha,
        risk_bound: risk_bound_lhs(0.0, n, loss_bound),
    }
}

/// Reference traversal: evaluates `L_N` with a full pass over the scores for
/// every candidate and keeps the smallest feasible one. Costs `O(M * N)`.
///
/// Agrees with [`calibrate_beta_from_scores`] when `candidates` is the
/// [`candidate_grid`] of `scores`.
pub fn naive_calibrate_beta(
    scores: &[f64],
    alpha: RiskLevel,
    loss_bound: f64,
    candidates: &[f64],
) -> Result<RccpThreshold> {
    if scores.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    check_loss_bound(loss_bound)?;
    let n = scores.len();
    let mut best: Option<(f64, f64)> = None;
    for &candidate in candidates {
        let above = scores.iter().filter(|&&s| s > candidate).count();
        let bound = risk_bound_lhs(above as f64 / n as f64, n, loss_bound);
        if feasible(bound, alpha) && best.is_none_or(|(b, _)| candidate < b) {
            best = Some((candidate, bound));
        }
    }
    Ok(match best {
        Some((beta, bound)) => RccpThreshold {
            beta_hat: Cutoff::Finite(beta),
            loss_bound,
            n_cal: n,
            alpha,
            risk_bound: bound,
        },
        None => full_set(n, alpha, loss_bound),
    })
}

/// Calibrates `beta_hat` for an arbitrary monotone loss.
///
/// The candidate grid is every per-label score of every calibration example
/// plus `{0, 1}`; monotonicity of the loss lets the search bisect it.
pub fn calibrate_beta_with<L: SetLoss + ?Sized>(
    cal: &ScoreDataset,
    alpha: RiskLevel,
    loss: &L,
) -> Result<RccpThreshold> {
    cal.fail_if_empty("calibration set")?;
    let loss_bound = loss.upper_bound();
    check_loss_bound(loss_bound)?;
    let n = cal.len();
    let per_label: Vec<f64> = cal
        .iter()
        .flat_map(|ex| ex.probs.as_slice().iter().map(|&p| 1.0 - p))
        .collect();
    let grid = candidate_grid(&per_label);
    let bound_at = |beta: f64| -> Result<f64> { Ok(risk_bound_lhs(empirical_risk_with(cal, beta, loss)?, n, loss_bound)) };

    // First grid index whose bound is feasible; the bound is non-increasing along the grid.
    let (mut lo, mut hi) = (0, grid.len());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(bound_at(grid[mid])?, alpha) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if lo == grid.len() {
        return Ok(full_set(n, alpha, loss_bound));
    }
    Ok(RccpThreshold {
        beta_hat: Cutoff::Finite(grid[lo]),
        loss_bound,
        n_cal: n,
        alpha,
        risk_bound: bound_at(grid[lo])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;
    use crate::scp::ScpThreshold;
    use proptest::prelude::*;

    fn alpha(a: f64) -> RiskLevel {
        RiskLevel::new(a).unwrap()
    }

    fn pv(p: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(p.to_vec()).unwrap()
    }

    /// Exhaustive oracle: minimum over the grid of betas whose bound holds,
    /// evaluating the risk by direct counting.
    fn brute_force_beta(scores: &[f64], a: f64, b: f64) -> Option<f64> {
        let n = scores.len() as f64;
        candidate_grid(scores)
            .into_iter()
            .filter(|&beta| {
                let above = scores.iter().filter(|&&s| s > beta).count() as f64;
                (above + b) / (n + 1.0) <= a + 1e-12
            })
            .reduce(f64::min)
    }

    #[test]
    fn beta_set_examples() {
        assert_eq!(prediction_set_beta(&pv(&[0.5, 0.3, 0.2]), 0.6).labels(), &[Label(0)]);
        assert_eq!(prediction_set_beta(&pv(&[0.5, 0.3, 0.2]), 1.0), PredictionSet::full(3));
        assert_eq!(prediction_set_beta(&pv(&[1.0, 0.0]), 0.0).labels(), &[Label(0)]);
    }

    #[test]
    fn loss_examples() {
        let set = PredictionSet::from_labels([Label(0), Label(2)]);
        assert_eq!(miscoverage_loss(&set, Label(1)), 1.0);
        assert_eq!(miscoverage_loss(&PredictionSet::from_labels([Label(1)]), Label(1)), 0.0);
        assert_eq!(miscoverage_loss(&PredictionSet::empty(), Label(0)), 1.0);
    }

    #[test]
    fn risk_bound_examples() {
        assert!((risk_bound_lhs(0.25, 4, 1.0) - 0.4).abs() < 1e-15);
        assert_eq!(risk_bound_lhs(0.0, 7, 0.0), 0.0);
        assert_eq!(risk_bound_lhs(1.0, 9, 1.0), 1.0);
    }

    /// Three-label dataset whose true-label scores are `scores`, with the
    /// remaining mass spread over the other labels.
    fn dataset(scores: &[f64]) -> ScoreDataset {
        validate_dataset(
            scores.iter().map(|&s| (vec![1.0 - s, s / 2.0, s / 2.0], 0)),
            3,
        )
        .unwrap()
    }

    #[test]
    fn empirical_risk_examples() {
        let scores = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(empirical_risk_from_scores(&scores, 0.25), 0.5);
        let ds = dataset(&scores);
        assert_eq!(empirical_risk(&ds, 0.25).unwrap(), 0.5);
        assert_eq!(empirical_risk(&ds, 1.0).unwrap(), 0.0);
        assert_eq!(empirical_risk(&ds, 0.0).unwrap(), 1.0);
        assert!(empirical_risk(&ScoreDataset::empty(3).unwrap(), 0.5).is_err());
    }

    #[test]
    fn calibrate_examples() {
        let t = calibrate_beta_from_scores(&[0.1, 0.2, 0.3, 0.4], alpha(0.5), 1.0).unwrap();
        assert_eq!(t.beta_hat, Cutoff::Finite(0.3));
        assert!((t.risk_bound - 0.4).abs() < 1e-15);
        assert_eq!(brute_force_beta(&[0.1, 0.2, 0.3, 0.4], 0.5, 1.0), Some(0.3));

        let t = calibrate_beta_from_scores(&[0.1, 0.2, 0.3, 0.4], alpha(0.1), 1.0).unwrap();
        assert!(t.is_full_set());
        assert!((t.risk_bound - 0.2).abs() < 1e-15);

        let t = calibrate_beta_from_scores(&[0.4], alpha(0.9), 1.0).unwrap();
        assert_eq!(t.beta_hat, Cutoff::Finite(0.4));
        assert_eq!(t.risk_bound, 0.5);
    }

    #[test]
    fn zero_loss_bound_allows_beta_zero() {
        // With B = 0 and alpha = 0.5, two of four points may be missed.
        let t = calibrate_beta_from_scores(&[0.0, 0.0, 0.3, 0.4], alpha(0.5), 0.0).unwrap();
        assert_eq!(t.beta_hat, Cutoff::Finite(0.0));
    }

    #[test]
    fn invalid_inputs() {
        assert!(calibrate_beta_from_scores(&[], alpha(0.5), 1.0).is_err());
        assert!(calibrate_beta_from_scores(&[0.2], alpha(0.5), -1.0).is_err());
        assert!(calibrate_beta_from_scores(&[0.2], alpha(0.5), f64::NAN).is_err());
    }

    #[test]
    fn generic_loss_search_matches_specialised_search() {
        let ds = dataset(&[0.05, 0.4, 0.35, 0.9, 0.6, 0.2, 0.75]);
        for a in [0.2, 0.3, 0.5, 0.7] {
            let generic = calibrate_beta_with(&ds, alpha(a), &Miscoverage).unwrap();
            let fast = calibrate_beta(&ds, alpha(a), 1.0).unwrap();
            assert_eq!(generic.beta_hat, fast.beta_hat, "alpha = {a}");
        }
    }

    proptest! {
        #[test]
        fn risk_is_non_increasing_in_beta(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..50),
            mut betas in proptest::collection::vec(0.0f64..=1.0, 2..20),
        ) {
            betas.sort_unstable_by(f64::total_cmp);
            let risks: Vec<f64> = betas.iter().map(|&b| empirical_risk_from_scores(&scores, b)).collect();
            prop_assert!(risks.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn beta_hat_is_the_feasible_infimum(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..50),
            a in 0.01f64..0.99,
            b in 0.0f64..1.5,
        ) {
            let t = calibrate_beta_from_scores(&scores, alpha(a), b).unwrap();
            prop_assert_eq!(t.beta_hat.finite(), brute_force_beta(&scores, a, b));
            if let Cutoff::Finite(beta) = t.beta_hat {
                let n = scores.len();
                prop_assert!(risk_bound_lhs(empirical_risk_from_scores(&scores, beta), n, b) <= a + 1e-12);
                let grid = candidate_grid(&scores);
                if let Some(prev) = grid.iter().copied().filter(|&c| c < beta).reduce(f64::max) {
                    prop_assert!(risk_bound_lhs(empirical_risk_from_scores(&scores, prev), n, b) > a + 1e-12);
                }
            }
        }

        #[test]
        fn naive_and_sorted_searches_agree(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..50),
            a in 0.01f64..0.99,
        ) {
            let fast = calibrate_beta_from_scores(&scores, alpha(a), 1.0).unwrap();
            let naive = naive_calibrate_beta(&scores, alpha(a), 1.0, &candidate_grid(&scores)).unwrap();
            prop_assert_eq!(fast, naive);
        }

        #[test]
        fn unit_bound_reproduces_split_conformal(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..80),
            a in 0.01f64..0.99,
        ) {
            let rccp = calibrate_beta_from_scores(&scores, alpha(a), 1.0).unwrap();
            let scp = ScpThreshold::from_scores(&scores, alpha(a)).unwrap();
            prop_assert_eq!(rccp.beta_hat, scp.q_hat);
        }
    }
}
