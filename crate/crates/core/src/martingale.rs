//! Mini-batch online conformal prediction with a floored test supermartingale.
//!
//! Each step draws a small calibration batch `B_t` and one test point. Within
//! a batch the `n_t + 1` points are assumed exchangeable; across batches the
//! distribution may drift. The batch e-value
//!
//! ```text
//! E_t = (n_t + 1) * s_test / (sum_i s_i + s_test)
//! ```
//!
//! has conditional mean one under within-batch exchangeability, and the
//! process
//!
//! ```text
//! M_t = max{ (1 - gamma) * E_t + gamma * M_{t-1}, 1 },   M_0 = 1
//! ```
//!
//! is tracked along the true-label path. A candidate label `m` enters the
//! set when its hypothetical `M_t^m`, seeded from `M_{t-1}`, stays below
//! `1 / alpha`.
//!
//! Prediction ([`predict_set_online`]) never mutates state; the transition
//! ([`advance_state`]) needs the revealed test label. Without label feedback
//! the state stays frozen, which falls outside the coverage guarantee.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledExample, PredictionSet, ProbabilityVector, RiskLevel, ScoreDataset};
use crate::error::{Error, Result};
use crate::scp::nonconformity_score;

pub const DEFAULT_BATCH_SIZE: usize = 5;
pub const DEFAULT_GAMMA: f64 = 0.5;

/// Mixing rate `gamma` in the open interval `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct MixingRate(f64);

impl MixingRate {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma > 0.0 && gamma < 1.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::param("mixing rate", format!("must lie in (0, 1), got {gamma}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for MixingRate {
    fn default() -> Self {
        Self(DEFAULT_GAMMA)
    }
}

impl<'de> Deserialize<'de> for MixingRate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        MixingRate::new(f64::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

/// E-value of `candidate` against a batch of calibration scores.
///
/// Defined as 1 when every score is zero.
pub fn evalue(cal_scores: &[f64], candidate: f64) -> Result<f64> {
    if cal_scores.is_empty() {
        return Err(Error::Empty("calibration batch"));
    }
    if let Some(&bad) = cal_scores.iter().chain(std::iter::once(&candidate)).find(|s| !(**s >= 0.0)) {
        return Err(Error::param("nonconformity score", format!("must be non-negative, got {bad}")));
    }
    let denom: f64 = cal_scores.iter().sum::<f64>() + candidate;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((cal_scores.len() as f64 + 1.0) * candidate / denom)
}

/// `max{(1 - gamma) * e + gamma * m_prev, 1}`.
pub fn martingale_update(m_prev: f64, e: f64, gamma: MixingRate) -> f64 {
    let g = gamma.value();
    ((1.0 - g) * e + g * m_prev).max(1.0)
}

/// Current value of the supermartingale plus its history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleState {
    value: f64,
    gamma: MixingRate,
    step: usize,
    trajectory: Vec<f64>,
}

impl MartingaleState {
    /// `M_0 = 1`.
    pub fn new(gamma: MixingRate) -> Self {
        Self {
            value: 1.0,
            gamma,
            step: 0,
            trajectory: Vec::new(),
        }
    }

    /// A state resumed at `value`, which must be at least 1.
    pub fn resume(value: f64, gamma: MixingRate) -> Result<Self> {
        if !(value >= 1.0) || !value.is_finite() {
            return Err(Error::param("martingale value", format!("must be finite and >= 1, got {value}")));
        }
        Ok(Self {
            value,
            ..Self::new(gamma)
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn gamma(&self) -> MixingRate {
        self.gamma
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Values `M_1, ..., M_t` recorded so far.
    pub fn trajectory(&self) -> &[f64] {
        &self.trajectory
    }
}

/// One step's calibration batch and test point.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    calibration: Vec<LabeledExample>,
    cal_scores: Vec<f64>,
    test_probs: ProbabilityVector,
    test_label: Option<Label>,
}

impl Batch {
    pub fn new(
        calibration: Vec<LabeledExample>,
        test_probs: ProbabilityVector,
        test_label: Option<Label>,
    ) -> Result<Self> {
        if calibration.is_empty() {
            return Err(Error::Empty("calibration batch"));
        }
        let k = test_probs.len();
        for (row, ex) in calibration.iter().enumerate() {
            if ex.probs.len() != k {
                return Err(Error::DimensionMismatch {
                    row,
                    expected: k,
                    found: ex.probs.len(),
                });
            }
        }
        if let Some(label) = test_label {
            if label.index() >= k {
                return Err(Error::LabelOutOfRange {
                    row: calibration.len(),
                    label: label.index(),
                    num_labels: k,
                });
            }
        }
        let cal_scores = calibration.iter().map(LabeledExample::score).collect();
        Ok(Self {
            calibration,
            cal_scores,
            test_probs,
            test_label,
        })
    }

    pub fn calibration(&self) -> &[LabeledExample] {
        &self.calibration
    }

    pub fn calibration_scores(&self) -> &[f64] {
        &self.cal_scores
    }

    pub fn test_probs(&self) -> &ProbabilityVector {
        &self.test_probs
    }

    pub fn test_label(&self) -> Option<Label> {
        self.test_label
    }
}

/// Prediction set plus the hypothetical martingale value of every label.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlinePrediction {
    pub set: PredictionSet,
    pub candidate_values: Vec<f64>,
}

/// Scores every label against the batch and keeps those whose updated
/// martingale stays below `1 / alpha`. Does not modify `state`.
pub fn predict_set_online(state: &MartingaleState, batch: &Batch, alpha: RiskLevel) -> OnlinePrediction {
    let limit = 1.0 / alpha.value();
    let sum: f64 = batch.cal_scores.iter().sum();
    let n = batch.cal_scores.len() as f64;
    let mut members = Vec::new();
    let candidate_values: Vec<f64> = (0..batch.test_probs.len())
        .map(|m| {
            let s = nonconformity_score(&batch.test_probs, Label(m));
            let e = batch_evalue(n, sum, s);
            let value = martingale_update(state.value, e, state.gamma);
            if value < limit {
                members.push(Label(m));
            }
            value
        })
        .collect();
    OnlinePrediction {
        set: PredictionSet::from_labels(members),
        candidate_values,
    }
}

// Batch scores are validated non-negative at construction, so the e-value
// reduces to this closed form.
fn batch_evalue(n: f64, cal_sum: f64, s: f64) -> f64 {
    let denom = cal_sum + s;
    if denom == 0.0 {
        1.0
    } else {
        (n + 1.0) * s / denom
    }
}

/// Applies the true-label e-value of `batch` to `state`.
pub fn advance_state(state: &MartingaleState, batch: &Batch) -> Result<MartingaleState> {
    let label = batch.test_label.ok_or(Error::MissingLabel)?;
    let s = nonconformity_score(&batch.test_probs, label);
    let e = evalue(&batch.cal_scores, s)?;
    let value = martingale_update(state.value, e, state.gamma);
    let mut trajectory = state.trajectory.clone();
    trajectory.push(value);
    Ok(MartingaleState {
        value,
        gamma: state.gamma,
        step: state.step + 1,
        trajectory,
    })
}

/// Predicts, then advances when the label is known; holds the state otherwise.
pub fn step(state: &MartingaleState, batch: &Batch, alpha: RiskLevel) -> (OnlinePrediction, MartingaleState) {
    let prediction = predict_set_online(state, batch, alpha);
    let next = advance_state(state, batch).unwrap_or_else(|_| state.clone());
    (prediction, next)
}

/// Parameters of one online run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamParams {
    pub alpha: RiskLevel,
    pub gamma: MixingRate,
    pub batch_size: usize,
    pub seed: u64,
}

/// Outcome of one test point in a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamStep {
    pub step: usize,
    pub set: PredictionSet,
    /// `M_t` after observing this step's label.
    pub value: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamResult {
    pub steps: Vec<StreamStep>,
}

impl StreamResult {
    /// `M_1, ..., M_T`.
    pub fn trajectory(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn final_value(&self) -> f64 {
        self.steps.last().map_or(1.0, |s| s.value)
    }

    pub fn sets(&self) -> Vec<PredictionSet> {
        self.steps.iter().map(|s| s.set.clone()).collect()
    }

    /// Fraction of steps whose set held the true label; 1 for an empty stream.
    pub fn coverage(&self) -> f64 {
        if self.steps.is_empty() {
            return 1.0;
        }
        self.steps.iter().filter(|s| s.covered).count() as f64 / self.steps.len() as f64
    }
}

/// Runs the online procedure over `test_stream`, drawing a fresh batch of
/// `batch_size` calibration points from `cal_pool` at every step.
///
/// Batches are sampled without replacement within a step and independently
/// across steps, from a generator seeded with `params.seed`.
pub fn run_stream(cal_pool: &ScoreDataset, test_stream: &ScoreDataset, params: StreamParams) -> Result<StreamResult> {
    if params.batch_size == 0 {
        return Err(Error::param("batch size", "must be at least 1"));
    }
    if cal_pool.len() < params.batch_size {
        return Err(Error::param(
            "calibration pool",
            format!("{} examples cannot fill batches of {}", cal_pool.len(), params.batch_size),
        ));
    }
    if cal_pool.num_labels() != test_stream.num_labels() {
        return Err(Error::DimensionMismatch {
            row: 0,
            expected: cal_pool.num_labels(),
            found: test_stream.num_labels(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut state = MartingaleState::new(params.gamma);
    let mut steps = Vec::with_capacity(test_stream.len());
    for (t, test) in test_stream.iter().enumerate() {
        let picked = rand::seq::index::sample(&mut rng, cal_pool.len(), params.batch_size);
        let calibration = picked.iter().map(|i| cal_pool.examples()[i].clone()).collect();
        let batch = Batch::new(calibration, test.probs.clone(), Some(test.label))?;
        let prediction = predict_set_online(&state, &batch, params.alpha);
        state = advance_state(&state, &batch)?;
        steps.push(StreamStep {
            step: t + 1,
            covered: prediction.set.contains(test.label),
            set: prediction.set,
            value: state.value,
        });
    }
    Ok(StreamResult { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;
    use proptest::prelude::*;

    fn gamma(g: f64) -> MixingRate {
        MixingRate::new(g).unwrap()
    }

    fn alpha(a: f64) -> RiskLevel {
        RiskLevel::new(a).unwrap()
    }

    fn pv(p: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(p.to_vec()).unwrap()
    }

    /// Binary calibration example with true-label score `s`.
    fn cal_example(s: f64) -> LabeledExample {
        LabeledExample::new(pv(&[1.0 - s, s]), Label(0)).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn evalue_examples() {
        assert!(close(evalue(&[0.2; 5], 0.5).unwrap(), 2.0));
        assert!(close(evalue(&[0.3; 5], 0.3).unwrap(), 1.0));
        assert_eq!(evalue(&[0.0; 5], 0.0).unwrap(), 1.0);
        assert!(evalue(&[0.2, -0.1], 0.5).is_err());
        assert!(evalue(&[0.2], -0.5).is_err());
        assert!(evalue(&[0.2], f64::NAN).is_err());
        assert!(evalue(&[], 0.5).is_err());
    }

    #[test]
    fn update_examples() {
        assert_eq!(martingale_update(1.0, 1.0, gamma(0.5)), 1.0);
        assert_eq!(martingale_update(1.0, 3.0, gamma(0.5)), 2.0);
        assert_eq!(martingale_update(2.0, 0.0, gamma(0.5)), 1.0);
        assert!(MixingRate::new(0.0).is_err());
        assert!(MixingRate::new(1.0).is_err());
    }

    #[test]
    fn hand_computed_prediction() {
        let state = MartingaleState::new(gamma(0.5));
        let batch = Batch::new(vec![cal_example(0.2); 5], pv(&[0.9, 0.1]), Some(Label(1))).unwrap();
        let out = predict_set_online(&state, &batch, alpha(0.1));
        // s0 = 0.1: E = 0.6 / 1.1, M = max(0.5 E + 0.5, 1) = 1.
        // s1 = 0.9: E = 5.4 / 1.9, M = 0.5 E + 0.5.
        let e1 = 5.4 / 1.9;
        assert_eq!(out.candidate_values[0], 1.0);
        assert!(close(out.candidate_values[1], 0.5 * e1 + 0.5));
        assert!((out.candidate_values[1] - 1.921).abs() < 1e-3);
        assert_eq!(out.set, PredictionSet::full(2));
        // Prediction is read-only.
        assert_eq!(state.value(), 1.0);

        let next = advance_state(&state, &batch).unwrap();
        assert!(close(next.value(), 0.5 * e1 + 0.5));
        assert_eq!(next.step(), 1);
        assert_eq!(next.trajectory(), &[next.value()]);
    }

    #[test]
    fn zero_score_label_joins_from_a_fresh_state() {
        let state = MartingaleState::new(gamma(0.9));
        let batch = Batch::new(vec![cal_example(0.4); 5], pv(&[1.0, 0.0]), None).unwrap();
        let out = predict_set_online(&state, &batch, alpha(0.5));
        assert!(out.set.contains(Label(0)));
    }

    #[test]
    fn threshold_boundary_at_inverse_alpha() {
        // M_{t-1} = 10 = 1/alpha, gamma = 0.5: label joins iff E < 10.
        let state = MartingaleState::resume(10.0, gamma(0.5)).unwrap();
        assert!(martingale_update(state.value(), 9.9, state.gamma()) < 10.0);
        assert!(martingale_update(state.value(), 10.1, state.gamma()) >= 10.0);
        assert!(close(martingale_update(10.0, 9.9, gamma(0.5)), 9.95));
        assert!(close(martingale_update(10.0, 10.1, gamma(0.5)), 10.05));

        // Realise both e-values through one batch: 20 calibration scores summing
        // to 1 give E = 21 s / (1 + s), so s = E / (21 - E).
        let s_in = 9.9 / 11.1;
        let s_out = 10.1 / 10.9;
        let zero = LabeledExample::new(pv(&[1.0, 0.0, 0.0]), Label(0)).unwrap();
        let one = LabeledExample::new(pv(&[0.0, 1.0, 0.0]), Label(0)).unwrap();
        let mut cal = vec![zero; 19];
        cal.push(one);
        let rest = 1.0 - (1.0 - s_in) - (1.0 - s_out);
        let batch = Batch::new(cal, pv(&[1.0 - s_in, 1.0 - s_out, rest]), None).unwrap();
        let out = predict_set_online(&state, &batch, alpha(0.1));
        assert!((out.candidate_values[0] - 9.95).abs() < 1e-9);
        assert!((out.candidate_values[1] - 10.05).abs() < 1e-9);
        assert_eq!(out.set.labels(), &[Label(0), Label(2)]);
    }

    #[test]
    fn equal_scores_keep_the_fixed_point() {
        let state = MartingaleState::new(gamma(0.5));
        let batch = Batch::new(vec![cal_example(0.3); 5], pv(&[0.7, 0.3]), Some(Label(0))).unwrap();
        assert!(close(advance_state(&state, &batch).unwrap().value(), 1.0));
    }

    #[test]
    fn missing_label_freezes_state() {
        let state = MartingaleState::new(gamma(0.5));
        let batch = Batch::new(vec![cal_example(0.2); 5], pv(&[0.1, 0.9]), None).unwrap();
        assert!(matches!(advance_state(&state, &batch), Err(Error::MissingLabel)));
        let (_, next) = step(&state, &batch, alpha(0.2));
        assert_eq!(next, state);
    }

    #[test]
    fn batch_validation() {
        assert!(Batch::new(vec![], pv(&[0.5, 0.5]), None).is_err());
        assert!(Batch::new(vec![cal_example(0.2)], pv(&[0.2, 0.3, 0.5]), None).is_err());
        assert!(Batch::new(vec![cal_example(0.2)], pv(&[0.5, 0.5]), Some(Label(2))).is_err());
        assert!(MartingaleState::resume(0.5, gamma(0.5)).is_err());
    }

    fn params(seed: u64) -> StreamParams {
        StreamParams {
            alpha: alpha(0.2),
            gamma: gamma(0.5),
            batch_size: 5,
            seed,
        }
    }

    fn small_pool() -> ScoreDataset {
        validate_dataset(
            (0..12).map(|i| {
                let p = 0.3 + 0.05 * i as f64;
                (vec![p, 1.0 - p], i % 2)
            }),
            2,
        )
        .unwrap()
    }

    #[test]
    fn empty_stream() {
        let out = run_stream(&small_pool(), &ScoreDataset::empty(2).unwrap(), params(1)).unwrap();
        assert!(out.steps.is_empty());
        assert_eq!(out.final_value(), 1.0);
    }

    #[test]
    fn stream_is_deterministic_given_seed() {
        let pool = small_pool();
        let a = run_stream(&pool, &pool, params(7)).unwrap();
        let b = run_stream(&pool, &pool, params(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trajectory().len(), pool.len());
    }

    #[test]
    fn perfect_model_stream_keeps_unit_martingale() {
        let pool = validate_dataset((0..10).map(|i| (vec![0.4, 0.6], i % 2)), 2).unwrap();
        let stream = validate_dataset((0..50).map(|i| {
            if i % 2 == 0 {
                (vec![1.0, 0.0], 0)
            } else {
                (vec![0.0, 1.0], 1)
            }
        }), 2)
        .unwrap();
        let out = run_stream(&pool, &stream, params(3)).unwrap();
        assert!(out.trajectory().iter().all(|&m| m == 1.0));
        assert_eq!(out.coverage(), 1.0);
    }

    #[test]
    fn stream_errors() {
        let pool = small_pool();
        let tiny = pool.select(&[0, 1]);
        assert!(run_stream(&tiny, &pool, params(1)).is_err());
        let three = validate_dataset(vec![(vec![0.2, 0.3, 0.5], 0)], 3).unwrap();
        assert!(run_stream(&pool, &three, params(1)).is_err());
        assert!(run_stream(&pool, &pool, StreamParams { batch_size: 0, ..params(1) }).is_err());
    }

    proptest! {
        #[test]
        fn evalue_is_bounded(
            cal in proptest::collection::vec(0.0f64..=1.0, 1..10),
            s in 0.0f64..=1.0,
        ) {
            let e = evalue(&cal, s).unwrap();
            prop_assert!(e >= 0.0);
            prop_assert!(e <= cal.len() as f64 + 1.0 + 1e-12);
        }

        #[test]
        fn martingale_never_drops_below_one(
            es in proptest::collection::vec(0.0f64..6.0, 0..50),
            g in 0.01f64..0.99,
        ) {
            let mut m = 1.0;
            for e in es {
                m = martingale_update(m, e, gamma(g));
                prop_assert!(m >= 1.0);
            }
        }

        #[test]
        fn sets_shrink_as_alpha_grows(
            cal in proptest::collection::vec(0.0f64..=1.0, 1..8),
            raw in proptest::collection::vec(0.01f64..1.0, 2..6),
            m in 1.0f64..8.0,
            g in 0.01f64..0.99,
            a in 0.01f64..0.99,
            b in 0.01f64..0.99,
        ) {
            let total: f64 = raw.iter().sum();
            let probs = pv(&raw.iter().map(|x| x / total).collect::<Vec<_>>());
            let k = probs.len();
            let calibration = cal.iter().map(|&s| {
                let mut p = vec![1.0 - s; 1];
                p.extend(std::iter::repeat_n(s / (k - 1) as f64, k - 1));
                LabeledExample::new(pv(&p), Label(0)).unwrap()
            }).collect();
            let batch = Batch::new(calibration, probs, None).unwrap();
            let state = MartingaleState::resume(m, gamma(g)).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let strict = predict_set_online(&state, &batch, alpha(lo)).set;
            let loose = predict_set_online(&state, &batch, alpha(hi)).set;
            prop_assert!(loose.is_subset(&strict));
        }
    }
}
