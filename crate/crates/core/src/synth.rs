//! Seeded synthetic classifier outputs.
//!
//! Each sample draws a true label `y` from the label prior and a latent
//! feature vector `z` with `z_y ~ N(sharpness, 1)` and `z_j ~ N(0, 1)` for
//! `j != y`. The emitted probabilities are
//!
//! ```text
//! p = softmax(sharpness * z / temperature)
//! ```
//!
//! At `temperature = 1` this is the exact posterior of `y` under a uniform
//! prior, so the outputs are calibrated; other temperatures miscalibrate
//! without changing the argmax. Top-1 accuracy depends only on `sharpness`
//! and `K` (see [`top1_accuracy`]), and is the same for every true label, so
//! a label-prior shift changes the label mix but not the model.

use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::data::{Label, LabeledExample, ProbabilityVector, ScoreDataset};
use crate::error::{Error, Result};

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub n: usize,
    pub sharpness: f64,
    pub temperature: f64,
    pub label_prior: Vec<f64>,
    pub seed: u64,
}

impl SynthConfig {
    /// Uniform prior, temperature 1.
    pub fn new(num_labels: usize, n: usize, sharpness: f64, seed: u64) -> Result<Self> {
        if num_labels < 2 {
            return Err(Error::TooFewLabels(num_labels));
        }
        let cfg = Self {
            num_labels,
            n,
            sharpness,
            temperature: 1.0,
            label_prior: vec![1.0 / num_labels as f64; num_labels],
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Uniform prior with sharpness chosen for the given top-1 accuracy.
    pub fn with_accuracy(num_labels: usize, n: usize, accuracy: f64, seed: u64) -> Result<Self> {
        Self::new(num_labels, n, sharpness_for_accuracy(num_labels, accuracy)?, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 {
            return Err(Error::TooFewLabels(self.num_labels));
        }
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err(Error::param("sharpness", format!("must be finite and > 0, got {}", self.sharpness)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::param("temperature", format!("must be finite and > 0, got {}", self.temperature)));
        }
        if self.label_prior.len() != self.num_labels {
            return Err(Error::param(
                "label prior",
                format!("has {} entries for {} labels", self.label_prior.len(), self.num_labels),
            ));
        }
        if self.label_prior.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::param("label prior", "entries must be finite and non-negative"));
        }
        let total: f64 = self.label_prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param("label prior", format!("sums to {total}, not 1")));
        }
        Ok(())
    }
}

fn draw_example<R: Rng>(rng: &mut R, cfg: &SynthConfig, labels: &WeightedIndex<f64>) -> LabeledExample {
    let y = labels.sample(rng);
    let scale = cfg.sharpness / cfg.temperature;
    let logits: Vec<f64> = (0..cfg.num_labels)
        .map(|j| {
            let z: f64 = StandardNormal.sample(rng);
            let mean = if j == y { cfg.sharpness } else { 0.0 };
            scale * (z + mean)
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&u| (u - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    let probs = ProbabilityVector::new(exp.into_iter().map(|e| e / total).collect())
        .expect("softmax output is a valid probability vector");
    LabeledExample { probs, label: Label(y) }
}

fn label_sampler(cfg: &SynthConfig) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(&cfg.label_prior).map_err(|e| Error::param("label prior", e.to_string()))
}

/// `config.n` i.i.d. samples, fully determined by `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<ScoreDataset> {
    config.validate()?;
    let labels = label_sampler(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let examples = (0..config.n).map(|_| draw_example(&mut rng, config, &labels)).collect();
    ScoreDataset::new(examples, config.num_labels)
}

/// Test stream of `base.n` samples under `shift`.
///
/// A one-time shift draws every sample from the shifted config. A per-batch
/// shift ramps linearly: sample `t` of `T` uses the shift scaled by `t / T`.
pub fn generate_shifted(base: &SynthConfig, shift: &ShiftSpec) -> Result<ScoreDataset> {
    match shift.schedule {
        ShiftSchedule::OneTime => generate(&apply_shift(base, shift)?),
        ShiftSchedule::PerBatch => {
            base.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
            let len = base.n.max(1) as f64;
            let mut examples = Vec::with_capacity(base.n);
            for t in 1..=base.n {
                let scaled = ShiftSpec {
                    magnitude: shift.magnitude * t as f64 / len,
                    ..*shift
                };
                let cfg = apply_shift(base, &scaled)?;
                examples.push(draw_example(&mut rng, &cfg, &label_sampler(&cfg)?));
            }
            ScoreDataset::new(examples, base.num_labels)
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Top-1 accuracy of the generator, `∫ φ(x - sharpness) Φ(x)^(K-1) dx`,
/// by composite Simpson quadrature.
pub fn top1_accuracy(num_labels: usize, sharpness: f64) -> f64 {
    const INTERVALS: usize = 4000;
    let (lo, hi) = (sharpness.min(0.0) - 12.0, sharpness.max(0.0) + 12.0);
    let h = (hi - lo) / INTERVALS as f64;
    let f = |x: f64| {
        let d = x - sharpness;
        (-0.5 * d * d).exp() / (2.0 * std::f64::consts::PI).sqrt() * std_normal_cdf(x).powi(num_labels as i32 - 1)
    };
    let mut sum = f(lo) + f(hi);
    for i in 1..INTERVALS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h);
    }
    sum * h / 3.0
}

/// Sharpness whose top-1 accuracy equals `accuracy`, by bisection on [`top1_accuracy`].
pub fn sharpness_for_accuracy(num_labels: usize, accuracy: f64) -> Result<f64> {
    if num_labels < 2 {
        return Err(Error::TooFewLabels(num_labels));
    }
    let chance = 1.0 / num_labels as f64;
    if !(accuracy > chance && accuracy < 1.0) {
        return Err(Error::param(
            "target accuracy",
            format!("must lie in ({chance}, 1) for {num_labels} labels, got {accuracy}"),
        ));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while top1_accuracy(num_labels, hi) < accuracy {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::param("target accuracy", "too close to 1"));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if top1_accuracy(num_labels, mid) < accuracy {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// `temperature *= exp(magnitude)`.
    TemperatureShift,
    /// `prior = (1 - w) prior + w δ_target`, `w = clamp(0.4 * magnitude, 0, 1)`.
    PriorShift,
    /// `sharpness *= exp(magnitude)`.
    SharpnessShift,
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature" | "temperature_shift" => Ok(ShiftKind::TemperatureShift),
            "prior" | "prior_shift" => Ok(ShiftKind::PriorShift),
            "sharpness" | "sharpness_shift" => Ok(ShiftKind::SharpnessShift),
            other => Err(Error::param("shift kind", format!("unknown kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftSchedule {
    #[default]
    OneTime,
    PerBatch,
}

impl FromStr for ShiftSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_time" | "one-time" => Ok(ShiftSchedule::OneTime),
            "per_batch" | "per-batch" => Ok(ShiftSchedule::PerBatch),
            other => Err(Error::param("shift schedule", format!("unknown schedule {other:?}"))),
        }
    }
}

/// A distribution shift applied to the test-side generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub magnitude: f64,
    #[serde(default)]
    pub schedule: ShiftSchedule,
    /// Label receiving mass under a prior shift.
    #[serde(default)]
    pub target: Label,
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind, magnitude: f64) -> Self {
        Self {
            kind,
            magnitude,
            schedule: ShiftSchedule::OneTime,
            target: Label(0),
        }
    }

    pub fn none() -> Self {
        Self::new(ShiftKind::TemperatureShift, 0.0)
    }
}

/// Returns `config` with `shift` applied at its full magnitude.
pub fn apply_shift(config: &SynthConfig, shift: &ShiftSpec) -> Result<SynthConfig> {
    if !shift.magnitude.is_finite() {
        return Err(Error::param("shift magnitude", format!("must be finite, got {}", shift.magnitude)));
    }
    let mut out = config.clone();
    match shift.kind {
        ShiftKind::TemperatureShift => out.temperature *= shift.magnitude.exp(),
        ShiftKind::SharpnessShift => out.sharpness *= shift.magnitude.exp(),
        ShiftKind::PriorShift => {
            let target = shift.target.index();
            if target >= out.num_labels {
                return Err(Error::LabelOutOfRange {
                    row: 0,
                    label: target,
                    num_labels: out.num_labels,
                });
            }
            let w = (0.4 * shift.magnitude).clamp(0.0, 1.0);
            for (j, p) in out.label_prior.iter_mut().enumerate() {
                *p = (1.0 - w) * *p + if j == target { w } else { 0.0 };
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// Seeded shuffle, then the first `floor(cal_ratio * n)` examples calibrate
/// and the rest test.
pub fn split(data: &ScoreDataset, cal_ratio: f64, seed: u64) -> Result<(ScoreDataset, ScoreDataset)> {
    let n = data.len();
    if !(cal_ratio > 0.0 && cal_ratio < 1.0) {
        return Err(Error::param("calibration ratio", format!("must lie in (0, 1), got {cal_ratio}")));
    }
    let n_cal = calibration_size(n, cal_ratio);
    if n_cal == 0 || n_cal == n {
        return Err(Error::param(
            "calibration ratio",
            format!("{cal_ratio} leaves an empty side when splitting {n} examples"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((data.select(&order[..n_cal]), data.select(&order[n_cal..])))
}

/// `floor(cal_ratio * n)`, robust to products like `0.29 * 100`.
pub fn calibration_size(n: usize, cal_ratio: f64) -> usize {
    (cal_ratio * n as f64 + 1e-9).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(n: usize, seed: u64) -> SynthConfig {
        SynthConfig::new(6, n, 1.2, seed).unwrap()
    }

    #[test]
    fn empty_and_deterministic() {
        assert!(generate(&base(0, 1)).unwrap().is_empty());
        let a = generate(&base(200, 9)).unwrap();
        assert_eq!(a, generate(&base(200, 9)).unwrap());
        assert_ne!(a, generate(&base(200, 10)).unwrap());
    }

    #[test]
    fn generated_vectors_are_normalized() {
        for ex in &generate(&base(500, 2)).unwrap() {
            assert!((ex.probs.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quadrature_limits() {
        assert!((top1_accuracy(6, 0.0) - 1.0 / 6.0).abs() < 1e-9);
        assert!((top1_accuracy(2, 1.0) - std_normal_cdf(1.0 / 2f64.sqrt())).abs() < 1e-9);
        assert!(top1_accuracy(6, 8.0) > 0.999);
        let s = sharpness_for_accuracy(6, 0.4).unwrap();
        assert!((top1_accuracy(6, s) - 0.4).abs() < 1e-9);
    }

    #[test]
    fn accuracy_target_is_validated() {
        assert!(sharpness_for_accuracy(6, 0.1).is_err());
        assert!(sharpness_for_accuracy(6, 1.0).is_err());
        assert!(sharpness_for_accuracy(1, 0.5).is_err());
    }

    #[test]
    fn softening_lowers_top_probability() {
        let cfg = base(2000, 5);
        let soft = SynthConfig {
            temperature: 2.0,
            ..cfg.clone()
        };
        let mean_top = |ds: &ScoreDataset| {
            ds.iter().map(|e| e.probs.as_slice().iter().copied().fold(0.0, f64::max)).sum::<f64>() / ds.len() as f64
        };
        assert!(mean_top(&generate(&soft).unwrap()) < mean_top(&generate(&cfg).unwrap()));
    }

    #[test]
    fn zero_shift_is_identity() {
        let cfg = base(10, 1);
        assert_eq!(apply_shift(&cfg, &ShiftSpec::none()).unwrap(), cfg);
        assert_eq!(apply_shift(&cfg, &ShiftSpec::new(ShiftKind::PriorShift, 0.0)).unwrap(), cfg);
    }

    #[test]
    fn prior_shift_mixes_toward_target() {
        let cfg = SynthConfig::new(4, 10, 1.0, 1).unwrap();
        let shifted = apply_shift(&cfg, &ShiftSpec::new(ShiftKind::PriorShift, 1.0)).unwrap();
        // w = 0.4: 0.6 * 0.25 + 0.4 and 0.6 * 0.25.
        let expected = [0.55, 0.15, 0.15, 0.15];
        for (p, e) in shifted.label_prior.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12, "{:?}", shifted.label_prior);
        }
        assert_eq!(cfg.label_prior, vec![0.25; 4]);
    }

    #[test]
    fn temperature_shift_uses_log_multiplier() {
        let cfg = base(10, 1);
        let shifted = apply_shift(&cfg, &ShiftSpec::new(ShiftKind::TemperatureShift, 2f64.ln())).unwrap();
        assert!((shifted.temperature - 2.0).abs() < 1e-12);
        assert_eq!(shifted.sharpness, cfg.sharpness);
    }

    #[test]
    fn non_finite_shift_is_rejected() {
        let cfg = base(10, 1);
        assert!(apply_shift(&cfg, &ShiftSpec::new(ShiftKind::SharpnessShift, f64::NEG_INFINITY)).is_err());
        assert!("warp".parse::<ShiftKind>().is_err());
        assert_eq!("prior".parse::<ShiftKind>().unwrap(), ShiftKind::PriorShift);
    }

    #[test]
    fn per_batch_shift_reaches_full_magnitude_at_the_end() {
        let cfg = base(300, 4);
        let shift = ShiftSpec {
            schedule: ShiftSchedule::PerBatch,
            ..ShiftSpec::new(ShiftKind::TemperatureShift, -2.0)
        };
        let stream = generate_shifted(&cfg, &shift).unwrap();
        assert_eq!(stream.len(), 300);
        let top = |e: &LabeledExample| e.probs.as_slice().iter().copied().fold(0.0, f64::max);
        let early: f64 = stream.examples()[..100].iter().map(top).sum();
        let late: f64 = stream.examples()[200..].iter().map(top).sum();
        assert!(late > early);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = generate(&base(10, 3)).unwrap();
        let (cal, test) = split(&ds, 0.5, 11).unwrap();
        assert_eq!((cal.len(), test.len()), (5, 5));
        assert_eq!(split(&ds, 0.5, 11).unwrap(), (cal, test));
        assert!(split(&ds, 0.05, 11).is_err());
        assert!(split(&ds, 0.0, 11).is_err());
        assert!(split(&ds, 1.0, 11).is_err());
        assert_eq!(calibration_size(100, 0.29), 29);
    }

    #[test]
    fn nested_calibration_sets_share_a_permutation() {
        let ds = generate(&base(50, 3)).unwrap();
        let (small, _) = split(&ds, 0.2, 8).unwrap();
        let (large, _) = split(&ds, 0.6, 8).unwrap();
        assert_eq!(small.examples(), &large.examples()[..small.len()]);
    }
}
