//! Score files and experiment reports.
//!
//! # Score file
//!
//! Comma-separated UTF-8 text with a header row:
//!
//! ```text
//! id,label,<name_1>,...,<name_K>
//! <sample_id>,<label name or index>,<p_1>,...,<p_K>
//! ```
//!
//! Labels are mapped to dense indices in header order; a label field that is
//! not a header name is accepted as a numeric index. Probabilities are
//! written with at most 9 significant digits.
//!
//! # Report
//!
//! A pretty-printed JSON document with top-level keys `experiment`,
//! `method`, `config`, `results`, and the optional `flags`, `trajectory`
//! and `benchmark`. [`write_report`] also emits flat CSV tables next to it:
//!
//! * `<stem>.results.csv`: `method,cal_ratio,alpha,trials,mean_ecr,sd_ecr,mean_apss,sd_apss`
//! * `<stem>.trajectory.csv`: `step,m_value,covered,set_size,set` (when a trajectory is present)
//! * `<stem>.bench.csv`: `n,method,candidates,seconds,threshold` (benchmark reports)
//!
//! Standard deviations are sample standard deviations (denominator `trials - 1`).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Cutoff, Label, LabeledExample, PredictionSet, ProbabilityVector, ScoreDataset};
use crate::error::{Error, Result};
use crate::martingale::StreamStep;
use crate::metrics::AggregateMetrics;

/// A score dataset together with the file-level names.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub label_names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub dataset: ScoreDataset,
}

impl ScoreFile {
    /// Wraps `dataset`, numbering samples from 0.
    pub fn new(dataset: ScoreDataset, label_names: Vec<String>) -> Result<Self> {
        let ids = (0..dataset.len()).map(|i| i.to_string()).collect();
        Self::with_ids(dataset, label_names, ids)
    }

    pub fn with_ids(dataset: ScoreDataset, label_names: Vec<String>, sample_ids: Vec<String>) -> Result<Self> {
        if label_names.len() != dataset.num_labels() {
            return Err(Error::param(
                "label names",
                format!("{} names for {} labels", label_names.len(), dataset.num_labels()),
            ));
        }
        check_unique_names(&label_names)?;
        if sample_ids.len() != dataset.len() {
            return Err(Error::param(
                "sample ids",
                format!("{} ids for {} samples", sample_ids.len(), dataset.len()),
            ));
        }
        Ok(Self {
            label_names,
            sample_ids,
            dataset,
        })
    }
}

/// `class_0, ..., class_{K-1}`.
pub fn default_label_names(num_labels: usize) -> Vec<String> {
    (0..num_labels).map(|i| format!("class_{i}")).collect()
}

fn check_unique_names(names: &[String]) -> Result<()> {
    let mut seen = HashMap::new();
    for (i, name) in names.iter().enumerate() {
        if name.is_empty() {
            return Err(Error::param("label names", format!("name {i} is empty")));
        }
        if let Some(j) = seen.insert(name.as_str(), i) {
            return Err(Error::param("label names", format!("{name:?} appears at columns {j} and {i}")));
        }
    }
    Ok(())
}

/// Reads and validates a score file.
pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreFile> {
    let path = path.as_ref();
    parse_scores(fs::File::open(path)?, &path.display().to_string())
}

/// Parses score-file text from `reader`; `origin` names the source in errors.
pub fn parse_scores<R: Read>(reader: R, origin: &str) -> Result<ScoreFile> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r?,
        None => return Err(parse_err(1, "missing header row".into())),
    };
    if header.len() < 4 || &header[0] != "id" || &header[1] != "label" {
        return Err(parse_err(
            1,
            "header must be `id,label,<name_1>,...,<name_K>` with K >= 2".into(),
        ));
    }
    let label_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    check_unique_names(&label_names).map_err(|e| parse_err(1, e.to_string()))?;
    let k = label_names.len();
    let by_name: HashMap<&str, usize> = label_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let mut ids = Vec::new();
    let mut examples = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != k + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields ({k} probabilities), found {}", k + 2, record.len()),
            ));
        }
        let label_field = &record[1];
        let label = match by_name.get(label_field) {
            Some(&i) => i,
            None => match label_field.parse::<usize>() {
                Ok(i) if i < k => i,
                _ => return Err(parse_err(line, format!("unknown label {label_field:?}"))),
            },
        };
        let probs = record
            .iter()
            .skip(2)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("invalid probability {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        examples.push(LabeledExample {
            probs: ProbabilityVector::validate_row(probs, line)?,
            label: Label(label),
        });
        ids.push(record[0].to_string());
    }
    let dataset = ScoreDataset::new(examples, k)?;
    Ok(ScoreFile {
        label_names,
        sample_ids: ids,
        dataset,
    })
}

/// Formats `x` rounded to 9 significant digits, in shortest form.
pub fn format_probability(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Writes `file` in the score-file format.
pub fn write_scores(file: &ScoreFile, path: impl AsRef<Path>) -> Result<()> {
    let mut out = fs::File::create(path)?;
    out.write_all(&scores_to_bytes(file)?)?;
    Ok(())
}

pub fn scores_to_bytes(file: &ScoreFile) -> Result<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(file.label_names.iter().cloned());
    wtr.write_record(&header)?;
    for (id, ex) in file.sample_ids.iter().zip(file.dataset.iter()) {
        let mut row = vec![id.clone(), file.label_names[ex.label.index()].clone()];
        row.extend(ex.probs.as_slice().iter().map(|&p| format_probability(p)));
        wtr.write_record(&row)?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Scp,
    Rccp,
    Martingale,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Scp => "scp",
            Method::Rccp => "rccp",
            Method::Martingale => "martingale",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Scp,
    Rccp,
    Ablation,
    Shift,
    Bench,
}

/// One trial's outcome at one risk level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub ecr: f64,
    pub apss: f64,
    pub full_set: bool,
    /// Certified risk bound at the calibrated threshold (risk control only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_bound: Option<f64>,
    /// Coverage of the calibrated threshold over the whole data pool: the
    /// calibration-conditional coverage a fresh draw from the pool receives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_coverage: Option<f64>,
}

/// Aggregates for one `(method, cal_ratio, alpha)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cal_ratio: Option<f64>,
    pub metrics: AggregateMetrics,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub summary: BTreeMap<String, f64>,
    pub per_trial: Vec<TrialRecord>,
}

/// Per-step record of one online stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub alpha: f64,
    pub steps: Vec<StreamStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub method: String,
    pub candidates: usize,
    pub seconds: f64,
    pub threshold: Cutoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResults {
    pub timings: Vec<TimingRow>,
    /// Naive traversal timings at a fixed `n` for increasing candidate counts.
    pub scaling: Vec<TimingRow>,
    pub thresholds_agree: bool,
    /// max / min of seconds per candidate across `scaling`.
    pub per_candidate_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub experiment: ExperimentKind,
    pub method: Vec<Method>,
    /// Echo of every input needed to rerun the experiment.
    pub config: serde_json::Value,
    pub results: Vec<ResultRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkResults>,
}

impl ReportDocument {
    pub fn row(&self, method: Method, alpha: f64) -> Option<&ResultRow> {
        self.results
            .iter()
            .find(|r| r.method == method && (r.alpha - alpha).abs() < 1e-12)
    }
}

pub fn report_to_string(report: &ReportDocument) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ReportDocument> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn results_table(report: &ReportDocument) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["method", "cal_ratio", "alpha", "trials", "mean_ecr", "sd_ecr", "mean_apss", "sd_apss"])?;
    for r in &report.results {
        let m = &r.metrics;
        w.write_record([
            r.method.as_str().to_string(),
            opt_num(r.cal_ratio),
            r.alpha.to_string(),
            m.trials.to_string(),
            m.mean_ecr.to_string(),
            m.sd_ecr.to_string(),
            m.mean_apss.to_string(),
            m.sd_apss.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn trajectory_table(trajectory: &Trajectory) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["step", "m_value", "covered", "set_size", "set"])?;
    for s in &trajectory.steps {
        let members: Vec<String> = s.set.labels().iter().map(|l| l.to_string()).collect();
        w.write_record([
            s.step.to_string(),
            s.value.to_string(),
            s.covered.to_string(),
            s.set.len().to_string(),
            members.join(" "),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn bench_table(bench: &BenchmarkResults) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["n", "method", "candidates", "seconds", "threshold"])?;
    for t in bench.timings.iter().chain(&bench.scaling) {
        let threshold = match t.threshold {
            Cutoff::Finite(v) => v.to_string(),
            Cutoff::FullSet => "full_set".to_string(),
        };
        w.write_record([
            t.n.to_string(),
            t.method.clone(),
            t.candidates.to_string(),
            t.seconds.to_string(),
            threshold,
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn companion(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

/// Writes the JSON report to `path` plus its companion tables; returns every path written.
pub fn write_report(report: &ReportDocument, path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    fs::write(path, report_to_string(report)?)?;
    let mut written = vec![path.to_path_buf()];

    let results = companion(path, "results");
    fs::write(&results, results_table(report)?)?;
    written.push(results);

    if let Some(t) = &report.trajectory {
        let p = companion(path, "trajectory");
        fs::write(&p, trajectory_table(t)?)?;
        written.push(p);
    }
    if let Some(b) = &report.benchmark {
        let p = companion(path, "bench");
        fs::write(&p, bench_table(b)?)?;
        written.push(p);
    }
    Ok(written)
}

/// A calibrated threshold saved by `calibrate` and consumed by `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub method: Method,
    pub alpha: f64,
    pub n_cal: usize,
    pub threshold: Cutoff,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_bound: Option<f64>,
    pub label_names: Vec<String>,
}

pub fn write_calibration(cal: &CalibrationFile, path: impl AsRef<Path>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(cal)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<CalibrationFile> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Prediction table: `id,label,covered,set_size,set`, with set members
/// given by name and separated by `;`.
pub fn predictions_table(file: &ScoreFile, sets: &[PredictionSet]) -> Result<Vec<u8>> {
    if sets.len() != file.dataset.len() {
        return Err(Error::LengthMismatch {
            left: sets.len(),
            right: file.dataset.len(),
        });
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["id", "label", "covered", "set_size", "set"])?;
    for ((id, ex), set) in file.sample_ids.iter().zip(file.dataset.iter()).zip(sets) {
        let members: Vec<&str> = set.labels().iter().map(|l| file.label_names[l.index()].as_str()).collect();
        w.write_record([
            id.as_str(),
            file.label_names[ex.label.index()].as_str(),
            if set.contains(ex.label) { "true" } else { "false" },
            &set.len().to_string(),
            &members.join(";"),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
