//! Repeated-trial experiments and the calibration cost benchmark.
//!
//! Every experiment is a pure function of its config: per-trial randomness
//! comes from [`derive_seed`] on the master seed, trials run in parallel on
//! the current rayon pool, and results are collected in trial order, so a
//! report is byte-identical across reruns and thread counts. Wrap a call in
//! [`with_threads`] to pin the pool size.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Cutoff, RiskLevel, ScoreDataset};
use crate::error::{Error, Result};
use crate::io::{
    read_scores, BenchmarkResults, ExperimentKind, Method, ReportDocument, ResultRow, TimingRow, Trajectory,
    TrialRecord,
};
use crate::martingale::{run_stream, MixingRate, StreamParams, DEFAULT_BATCH_SIZE, DEFAULT_GAMMA};
use crate::metrics::{aggregate, mean_sd, TrialMetrics};
use crate::rccp::{calibrate_beta_from_scores, candidate_grid, naive_calibrate_beta, DEFAULT_LOSS_BOUND};
use crate::rng::{derive_seed, Domain};
use crate::scp::ScpThreshold;
use crate::synth::{generate, generate_shifted, sharpness_for_accuracy, split, ShiftKind, ShiftSpec, SynthConfig};

/// Synthetic data source; the seed comes from the experiment's master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSource {
    pub num_labels: usize,
    pub n: usize,
    pub sharpness: f64,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_prior: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

impl SynthSource {
    /// Uniform prior, temperature 1, sharpness calibrated to `accuracy`.
    pub fn with_accuracy(num_labels: usize, n: usize, accuracy: f64) -> Result<Self> {
        Ok(Self {
            num_labels,
            n,
            sharpness: sharpness_for_accuracy(num_labels, accuracy)?,
            temperature: 1.0,
            label_prior: None,
        })
    }

    pub fn config(&self, seed: u64) -> Result<SynthConfig> {
        let mut cfg = SynthConfig::new(self.num_labels, self.n, self.sharpness, seed)?;
        cfg.temperature = self.temperature;
        if let Some(prior) = &self.label_prior {
            cfg.label_prior = prior.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthSource),
    ScoreFile {
        path: PathBuf,
        /// Hex SHA-256 of the file contents; checked on load when present.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sha256: Option<String>,
    },
}

/// Parameters of the cost benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub alpha: f64,
    pub loss_bound: f64,
    /// Calibration size for the candidate-count scaling sweep.
    pub scaling_n: usize,
    pub scaling_candidates: Vec<usize>,
    /// Timing repetitions per scaling point; the minimum is kept.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1_000, 10_000, 100_000],
            alpha: 0.1,
            loss_bound: DEFAULT_LOSS_BOUND,
            scaling_n: 10_000,
            scaling_candidates: vec![500, 1_000, 2_000, 4_000, 8_000],
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub cal_ratio: f64,
    pub source: DataSource,
    pub gamma: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_bound: f64,
    /// Test points per stream in the shift experiment.
    pub stream_length: usize,
    /// Calibration ratios of the ablation.
    pub ratios: Vec<f64>,
    pub shift: ShiftSpec,
    /// Risk level whose per-step stream is recorded; defaults to the first of `alphas`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_alpha: Option<f64>,
    pub bench: BenchConfig,
}

fn tenths() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Default synthetic regime: six labels at 40% top-1 accuracy.
pub const DEFAULT_NUM_LABELS: usize = 6;
pub const DEFAULT_ACCURACY: f64 = 0.4;
/// Default strong shift: temperature divided by e^1.5 (overconfident test model).
pub const DEFAULT_SHIFT_MAGNITUDE: f64 = -1.5;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alphas: tenths(),
            trials: 100,
            cal_ratio: 0.5,
            source: DataSource::Synthetic(
                SynthSource::with_accuracy(DEFAULT_NUM_LABELS, 2000, DEFAULT_ACCURACY)
                    .expect("default accuracy is attainable"),
            ),
            gamma: DEFAULT_GAMMA,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            loss_bound: DEFAULT_LOSS_BOUND,
            stream_length: 500,
            ratios: tenths(),
            shift: ShiftSpec::new(ShiftKind::TemperatureShift, DEFAULT_SHIFT_MAGNITUDE),
            trajectory_alpha: None,
            bench: BenchConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn risk_levels(&self) -> Result<Vec<RiskLevel>> {
        if self.alphas.is_empty() {
            return Err(Error::Empty("alpha grid"));
        }
        self.alphas.iter().map(|&a| RiskLevel::new(a)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.risk_levels()?;
        if self.trials == 0 {
            return Err(Error::param("trials", "must be at least 1"));
        }
        check_ratio(self.cal_ratio)?;
        for &r in &self.ratios {
            check_ratio(r)?;
        }
        MixingRate::new(self.gamma)?;
        if self.batch_size == 0 {
            return Err(Error::param("batch size", "must be at least 1"));
        }
        if !(self.loss_bound.is_finite() && self.loss_bound >= 0.0) {
            return Err(Error::param("loss bound", format!("must be finite and >= 0, got {}", self.loss_bound)));
        }
        if let Some(a) = self.trajectory_alpha {
            RiskLevel::new(a)?;
        }
        Ok(())
    }

    /// Config echo for reports. Score-file sources gain the content hash.
    pub fn echo(&self) -> Result<serde_json::Value> {
        let mut cfg = self.clone();
        if let DataSource::ScoreFile { path, sha256 } = &mut cfg.source {
            if sha256.is_none() {
                *sha256 = Some(file_sha256(path)?);
            }
        }
        Ok(serde_json::to_value(cfg)?)
    }

    /// Recovers the config echoed in `report`.
    pub fn from_report(report: &ReportDocument) -> Result<Self> {
        Ok(serde_json::from_value(report.config.clone())?)
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(Error::param("calibration ratio", format!("must lie in (0, 1), got {r}")))
    }
}

fn file_sha256(path: &PathBuf) -> Result<String> {
    let digest = Sha256::digest(std::fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs `f` on a dedicated rayon pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param("threads", e.to_string()))?;
    Ok(pool.install(f))
}

/// The data pool that trials resample from.
pub fn load_pool(cfg: &ExperimentConfig) -> Result<ScoreDataset> {
    match &cfg.source {
        DataSource::Synthetic(src) => generate(&src.config(derive_seed(cfg.seed, Domain::Pool, 0))?),
        DataSource::ScoreFile { path, sha256 } => {
            if let Some(expected) = sha256 {
                let actual = file_sha256(path)?;
                if &actual != expected {
                    return Err(Error::param(
                        "score file",
                        format!("{} has hash {actual}, config expects {expected}", path.display()),
                    ));
                }
            }
            Ok(read_scores(path)?.dataset)
        }
    }
}

/// Fraction of `sorted` scores admitted by `cutoff`.
fn pool_coverage(sorted: &[f64], cutoff: Cutoff) -> f64 {
    match cutoff {
        Cutoff::FullSet => 1.0,
        Cutoff::Finite(v) => sorted.partition_point(|&s| s <= v) as f64 / sorted.len() as f64,
    }
}

fn sorted_scores(data: &ScoreDataset) -> Vec<f64> {
    let mut s = data.scores();
    s.sort_unstable_by(f64::total_cmp);
    s
}

/// Calibrates `method` on sorted scores; returns the cutoff and, for risk
/// control, the certified bound.
fn calibrate(method: Method, sorted: &[f64], alpha: RiskLevel, loss_bound: f64) -> Result<(Cutoff, Option<f64>)> {
    match method {
        Method::Scp => Ok((ScpThreshold::from_sorted(sorted, alpha).q_hat, None)),
        Method::Rccp => {
            let t = calibrate_beta_from_scores(sorted, alpha, loss_bound)?;
            Ok((t.beta_hat, Some(t.risk_bound)))
        }
        Method::Martingale => Err(Error::param("method", "martingale is not a split method")),
    }
}

fn evaluate_cutoff(test: &ScoreDataset, cutoff: Cutoff, alpha: RiskLevel) -> Result<TrialMetrics> {
    let sets: Vec<_> = test.iter().map(|e| cutoff.predict(&e.probs)).collect();
    TrialMetrics::evaluate(&sets, &test.labels(), alpha)
}

/// One resampled split evaluated at every risk level.
fn split_trial(
    pool: &ScoreDataset,
    pool_sorted: &[f64],
    cfg: &ExperimentConfig,
    cal_ratio: f64,
    method: Method,
    alphas: &[RiskLevel],
    trial: usize,
) -> Result<Vec<TrialRecord>> {
    let (cal, test) = split(pool, cal_ratio, derive_seed(cfg.seed, Domain::Split, trial as u64))?;
    let cal_sorted = sorted_scores(&cal);
    alphas
        .iter()
        .map(|&alpha| {
            let (cutoff, risk_bound) = calibrate(method, &cal_sorted, alpha, cfg.loss_bound)?;
            let m = evaluate_cutoff(&test, cutoff, alpha)?;
            Ok(TrialRecord {
                ecr: m.ecr,
                apss: m.apss,
                full_set: cutoff.is_full_set(),
                risk_bound,
                pool_coverage: Some(pool_coverage(pool_sorted, cutoff)),
            })
        })
        .collect()
}

fn summarize(method: Method, alpha: RiskLevel, n_test: usize, records: Vec<TrialRecord>) -> Result<ResultRow> {
    let metrics: Vec<TrialMetrics> = records
        .iter()
        .map(|r| TrialMetrics {
            ecr: r.ecr,
            apss: r.apss,
            n_test,
            alpha,
        })
        .collect();
    let mut summary = BTreeMap::new();
    summary.insert("full_set_trials".into(), records.iter().filter(|r| r.full_set).count() as f64);
    let pool: Vec<f64> = records.iter().filter_map(|r| r.pool_coverage).collect();
    if !pool.is_empty() {
        let (mean, sd) = mean_sd(&pool)?;
        summary.insert("mean_pool_coverage".into(), mean);
        summary.insert("sd_pool_coverage".into(), sd);
    }
    let bounds: Vec<f64> = records.iter().filter_map(|r| r.risk_bound).collect();
    if !bounds.is_empty() {
        summary.insert("mean_risk_bound".into(), mean_sd(&bounds)?.0);
        summary.insert("max_risk_bound".into(), bounds.iter().copied().fold(f64::MIN, f64::max));
    }
    let agg = aggregate(&metrics)?;
    summary.insert("mean_miscoverage".into(), 1.0 - agg.mean_ecr);
    Ok(ResultRow {
        method,
        alpha: alpha.value(),
        cal_ratio: None,
        metrics: agg,
        summary,
        per_trial: records,
    })
}

fn full_set_flags(rows: &[ResultRow]) -> Vec<String> {
    rows.iter()
        .filter_map(|r| {
            let n = r.per_trial.iter().filter(|t| t.full_set).count();
            (n > 0).then(|| {
                let ratio = r.cal_ratio.map(|c| format!(" cal_ratio={c}")).unwrap_or_default();
                format!(
                    "{} alpha={}{}: full-set threshold in {} of {} trials",
                    r.method.as_str(),
                    r.alpha,
                    ratio,
                    n,
                    r.per_trial.len()
                )
            })
        })
        .collect()
}

/// Rows for `method` at `cal_ratio`, one per risk level.
fn split_rows(
    pool: &ScoreDataset,
    cfg: &ExperimentConfig,
    cal_ratio: f64,
    method: Method,
) -> Result<Vec<ResultRow>> {
    let alphas = cfg.risk_levels()?;
    let pool_sorted = sorted_scores(pool);
    let per_trial: Vec<Vec<TrialRecord>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| split_trial(pool, &pool_sorted, cfg, cal_ratio, method, &alphas, t))
        .collect::<Result<_>>()?;
    let n_test = pool.len() - crate::synth::calibration_size(pool.len(), cal_ratio);
    alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let records = per_trial.iter().map(|trial| trial[i].clone()).collect();
            summarize(method, alpha, n_test, records)
        })
        .collect()
}

fn split_experiment(cfg: &ExperimentConfig, method: Method, kind: ExperimentKind) -> Result<ReportDocument> {
    cfg.validate()?;
    let pool = load_pool(cfg)?;
    let results = split_rows(&pool, cfg, cfg.cal_ratio, method)?;
    Ok(ReportDocument {
        experiment: kind,
        method: vec![method],
        config: cfg.echo()?,
        flags: full_set_flags(&results),
        results,
        trajectory: None,
        benchmark: None,
    })
}

/// Split conformal prediction over `cfg.trials` resampled splits.
pub fn run_scp_experiment(cfg: &ExperimentConfig) -> Result<ReportDocument> {
    split_experiment(cfg, Method::Scp, ExperimentKind::Scp)
}

/// Risk-controlled conformal prediction over `cfg.trials` resampled splits.
pub fn run_rccp_experiment(cfg: &ExperimentConfig) -> Result<ReportDocument> {
    split_experiment(cfg, Method::Rccp, ExperimentKind::Rccp)
}

/// Split conformal prediction at each calibration ratio in `cfg.ratios`.
///
/// Trial `i` uses the same permutation at every ratio, so the calibration
/// sets are nested across ratios.
pub fn run_ratio_ablation(cfg: &ExperimentConfig) -> Result<ReportDocument> {
    cfg.validate()?;
    if cfg.ratios.is_empty() {
        return Err(Error::Empty("ratio grid"));
    }
    let pool = load_pool(cfg)?;
    let mut results = Vec::new();
    for &ratio in &cfg.ratios {
        for mut row in split_rows(&pool, cfg, ratio, Method::Scp)? {
            row.cal_ratio = Some(ratio);
            results.push(row);
        }
    }
    Ok(ReportDocument {
        experiment: ExperimentKind::Ablation,
        method: vec![Method::Scp],
        config: cfg.echo()?,
        flags: full_set_flags(&results),
        results,
        trajectory: None,
        benchmark: None,
    })
}

struct StreamTrial {
    scp: Vec<TrialRecord>,
    martingale: Vec<TrialRecord>,
    trajectory: Option<Trajectory>,
    final_values: Vec<f64>,
}

/// Calibration pool from the base generator, test stream from the shifted
/// one. Compares split conformal calibrated on the pool against the online
/// martingale method.
pub fn run_shift_experiment(cfg: &ExperimentConfig) -> Result<ReportDocument> {
    cfg.validate()?;
    let src = match &cfg.source {
        DataSource::Synthetic(src) => src,
        DataSource::ScoreFile { .. } => {
            return Err(Error::param("source", "the shift experiment needs a synthetic source"));
        }
    };
    let alphas = cfg.risk_levels()?;
    let gamma = MixingRate::new(cfg.gamma)?;
    let trajectory_alpha = RiskLevel::new(cfg.trajectory_alpha.unwrap_or(cfg.alphas[0]))?;

    let trials: Vec<StreamTrial> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<StreamTrial> {
            let t64 = t as u64;
            let pool = generate(&src.config(derive_seed(cfg.seed, Domain::StreamPool, t64))?)?;
            let mut stream_cfg = src.config(derive_seed(cfg.seed, Domain::StreamTest, t64))?;
            stream_cfg.n = cfg.stream_length;
            let stream = generate_shifted(&stream_cfg, &cfg.shift)?;
            if stream.is_empty() {
                return Err(Error::Empty("test stream"));
            }
            let pool_sorted = sorted_scores(&pool);
            let batch_seed = derive_seed(cfg.seed, Domain::StreamBatches, t64);

            let mut scp = Vec::new();
            let mut martingale = Vec::new();
            let mut trajectory = None;
            let mut final_values = Vec::new();
            for &alpha in &alphas {
                let cutoff = ScpThreshold::from_sorted(&pool_sorted, alpha).q_hat;
                let m = evaluate_cutoff(&stream, cutoff, alpha)?;
                scp.push(TrialRecord {
                    ecr: m.ecr,
                    apss: m.apss,
                    full_set: cutoff.is_full_set(),
                    risk_bound: None,
                    pool_coverage: None,
                });

                let params = StreamParams {
                    alpha,
                    gamma,
                    batch_size: cfg.batch_size,
                    seed: batch_seed,
                };
                let out = run_stream(&pool, &stream, params)?;
                let sets = out.sets();
                let m = TrialMetrics::evaluate(&sets, &stream.labels(), alpha)?;
                martingale.push(TrialRecord {
                    ecr: m.ecr,
                    apss: m.apss,
                    full_set: sets.iter().all(|s| s.len() == stream.num_labels()),
                    risk_bound: None,
                    pool_coverage: None,
                });
                final_values.push(out.final_value());
                if t == 0 && alpha == trajectory_alpha {
                    trajectory = Some(Trajectory {
                        alpha: alpha.value(),
                        steps: out.steps,
                    });
                }
            }
            Ok(StreamTrial {
                scp,
                martingale,
                trajectory,
                final_values,
            })
        })
        .collect::<Result<_>>()?;

    let mut results = Vec::new();
    for (method, pick) in [
        (Method::Scp, (|t: &StreamTrial, i: usize| t.scp[i].clone()) as fn(&StreamTrial, usize) -> TrialRecord),
        (Method::Martingale, |t: &StreamTrial, i: usize| t.martingale[i].clone()),
    ] {
        for (i, &alpha) in alphas.iter().enumerate() {
            let records = trials.iter().map(|t| pick(t, i)).collect();
            let mut row = summarize(method, alpha, cfg.stream_length, records)?;
            row.summary.remove("full_set_trials");
            if method == Method::Martingale {
                let finals: Vec<f64> = trials.iter().map(|t| t.final_values[i]).collect();
                row.summary.insert("mean_final_m".into(), mean_sd(&finals)?.0);
            }
            results.push(row);
        }
    }
    let trajectory = trials.into_iter().next().and_then(|t| t.trajectory);
    Ok(ReportDocument {
        experiment: ExperimentKind::Shift,
        method: vec![Method::Scp, Method::Martingale],
        config: cfg.echo()?,
        flags: Vec::new(),
        results,
        trajectory,
        benchmark: None,
    })
}

/// Wall time of `f` in seconds alongside its result.
fn timed<T>(f: impl FnOnce() -> T) -> (f64, T) {
    let start = Instant::now();
    let out = std::hint::black_box(f());
    (start.elapsed().as_secs_f64(), out)
}

fn bench_scores(cfg: &ExperimentConfig, n: usize, index: u64) -> Result<Vec<f64>> {
    let src = match &cfg.source {
        DataSource::Synthetic(src) => src.clone(),
        DataSource::ScoreFile { .. } => SynthSource::with_accuracy(DEFAULT_NUM_LABELS, n, DEFAULT_ACCURACY)?,
    };
    let mut synth = src.config(derive_seed(cfg.seed, Domain::Bench, index))?;
    synth.n = n;
    Ok(generate(&synth)?.scores())
}

/// Times split-conformal calibration, the sorted risk-control search and
/// the naive `O(M * N)` traversal, and checks that all three agree.
///
/// Also times the naive traversal at fixed `N` for growing candidate counts
/// `M`; `per_candidate_spread` near 1 means linear scaling in `M`.
pub fn run_cost_benchmark(cfg: &ExperimentConfig) -> Result<ReportDocument> {
    let bench = &cfg.bench;
    let alpha = RiskLevel::new(bench.alpha)?;
    if bench.sizes.is_empty() {
        return Err(Error::Empty("benchmark sizes"));
    }
    if let Some(&bad) = bench.sizes.iter().chain([&bench.scaling_n]).find(|&&n| n == 0) {
        return Err(Error::param("benchmark size", format!("must be positive, got {bad}")));
    }
    if bench.scaling_candidates.is_empty() || bench.scaling_candidates.contains(&0) {
        return Err(Error::param("scaling candidates", "need at least one positive count"));
    }
    let repeats = bench.repeats.max(1);

    let mut timings = Vec::new();
    let mut agree = true;
    for (i, &n) in bench.sizes.iter().enumerate() {
        let scores = bench_scores(cfg, n, i as u64)?;
        let (t_scp, scp) = timed(|| ScpThreshold::from_scores(&scores, alpha));
        let (t_fast, fast) = timed(|| calibrate_beta_from_scores(&scores, alpha, bench.loss_bound));
        let grid = candidate_grid(&scores);
        let (t_naive, naive) = timed(|| naive_calibrate_beta(&scores, alpha, bench.loss_bound, &grid));
        let (scp, fast, naive) = (scp?.q_hat, fast?.beta_hat, naive?.beta_hat);
        // Split conformal matches risk control only for the unit loss bound.
        agree &= fast == naive && (bench.loss_bound != 1.0 || scp == fast);
        for (method, seconds, threshold, candidates) in [
            ("scp", t_scp, scp, 0),
            ("rccp_sorted", t_fast, fast, grid.len()),
            ("rccp_naive", t_naive, naive, grid.len()),
        ] {
            timings.push(TimingRow {
                n,
                method: method.into(),
                candidates,
                seconds,
                threshold,
            });
        }
    }

    let scores = bench_scores(cfg, bench.scaling_n, bench.sizes.len() as u64)?;
    let mut scaling = Vec::new();
    for &m in &bench.scaling_candidates {
        let grid: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
        let mut best = f64::INFINITY;
        let mut threshold = Cutoff::FullSet;
        for _ in 0..repeats {
            let (secs, out) = timed(|| naive_calibrate_beta(&scores, alpha, bench.loss_bound, &grid));
            best = best.min(secs);
            threshold = out?.beta_hat;
        }
        scaling.push(TimingRow {
            n: bench.scaling_n,
            method: "rccp_naive".into(),
            candidates: m,
            seconds: best,
            threshold,
        });
    }
    let per_candidate: Vec<f64> = scaling.iter().map(|r| r.seconds / r.candidates as f64).collect();
    let max = per_candidate.iter().copied().fold(f64::MIN, f64::max);
    let min = per_candidate.iter().copied().fold(f64::MAX, f64::min);

    Ok(ReportDocument {
        experiment: ExperimentKind::Bench,
        method: vec![Method::Scp, Method::Rccp],
        config: cfg.echo()?,
        results: Vec::new(),
        flags: if agree {
            Vec::new()
        } else {
            vec!["thresholds disagree across implementations".into()]
        },
        trajectory: None,
        benchmark: Some(BenchmarkResults {
            timings,
            scaling,
            thresholds_agree: agree,
            per_candidate_spread: max / min,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            alphas: vec![0.1, 0.5],
            trials: 4,
            source: DataSource::Synthetic(SynthSource::with_accuracy(4, 200, 0.5).unwrap()),
            stream_length: 50,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn single_trial_has_zero_dispersion() {
        let cfg = ExperimentConfig { trials: 1, ..small() };
        let report = run_scp_experiment(&cfg).unwrap();
        assert_eq!(report.results.len(), 2);
        for row in &report.results {
            assert_eq!(row.metrics.sd_ecr, 0.0);
            assert_eq!(row.metrics.sd_apss, 0.0);
            assert_eq!(row.metrics.trials, 1);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            ExperimentConfig { alphas: vec![], ..small() },
            ExperimentConfig { alphas: vec![1.2], ..small() },
            ExperimentConfig { trials: 0, ..small() },
            ExperimentConfig { cal_ratio: 1.0, ..small() },
            ExperimentConfig { gamma: 1.0, ..small() },
            ExperimentConfig { batch_size: 0, ..small() },
            ExperimentConfig { ratios: vec![0.0], ..small() },
        ] {
            assert!(run_scp_experiment(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn infeasible_risk_control_is_flagged() {
        // 10 calibration points, B = 1: alpha = 0.05 < 1/11 forces full sets.
        let cfg = ExperimentConfig {
            alphas: vec![0.05, 0.5],
            source: DataSource::Synthetic(SynthSource::with_accuracy(4, 20, 0.5).unwrap()),
            ..small()
        };
        let report = run_rccp_experiment(&cfg).unwrap();
        let row = report.row(Method::Rccp, 0.05).unwrap();
        assert_eq!(row.metrics.mean_ecr, 1.0);
        assert!(row.per_trial.iter().all(|t| t.full_set));
        assert_eq!(report.flags.len(), 1);
        assert!(report.flags[0].contains("alpha=0.05"));
    }

    #[test]
    fn shift_needs_a_synthetic_source() {
        let cfg = ExperimentConfig {
            source: DataSource::ScoreFile {
                path: "missing.csv".into(),
                sha256: None,
            },
            ..small()
        };
        assert!(run_shift_experiment(&cfg).is_err());
    }

    #[test]
    fn benchmark_rejects_empty_sizes() {
        let mut cfg = small();
        cfg.bench.sizes = vec![100, 0];
        assert!(run_cost_benchmark(&cfg).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = small();
        let back: ExperimentConfig = serde_json::from_value(cfg.echo().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"trials": 3}"#).unwrap();
        assert_eq!(partial.trials, 3);
        assert_eq!(partial.alphas.len(), 9);
    }
}
