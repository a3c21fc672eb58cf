//! Command-line front end: score-file calibration and prediction, synthetic
//! data generation and the experiment suite.
//!
//! Errors print as `error[<category>]: <message>` on stderr and exit with a
//! category-specific code (io 3, parse 4, config 5, validation 6).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use riskcp::harness::{
    self, load_pool, with_threads, DataSource, ExperimentConfig, SynthSource, DEFAULT_ACCURACY, DEFAULT_NUM_LABELS,
};
use riskcp::io::{
    self, default_label_names, read_calibration, read_scores, write_calibration, write_report, write_scores,
    CalibrationFile, Method, ScoreFile,
};
use riskcp::rccp::calibrate_beta;
use riskcp::scp::calibrate_quantile;
use riskcp::synth::{generate, generate_shifted, sharpness_for_accuracy, ShiftKind, ShiftSchedule, ShiftSpec, SynthConfig};
use riskcp::{Error, Label, Result, RiskLevel};

#[derive(Parser)]
#[command(name = "riskcp", version, about = "Conformal prediction sets with coverage and risk guarantees")]
struct Cli {
    /// Worker threads for parallel trials (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a threshold on a score file.
    Calibrate(CalibrateArgs),
    /// Emit prediction sets for a score file from a saved calibration.
    Predict(PredictArgs),
    /// Run an experiment and write its report.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentCommand,
    },
    /// Write a synthetic score file.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CalibrationMethod {
    Scp,
    Rccp,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, value_enum, default_value = "scp")]
    method: CalibrationMethod,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = riskcp::rccp::DEFAULT_LOSS_BOUND)]
    loss_bound: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    /// Prediction table path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    Scp(ExperimentArgs),
    Rccp(ExperimentArgs),
    Ablation(ExperimentArgs),
    Shift(ExperimentArgs),
    Bench(ExperimentArgs),
}

/// Synthetic-source flags shared by `generate` and `experiment`.
#[derive(Args, Default)]
struct SynthFlags {
    #[arg(long)]
    num_labels: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, conflicts_with = "accuracy")]
    sharpness: Option<f64>,
    /// Target top-1 accuracy; sets the sharpness by bisection.
    #[arg(long)]
    accuracy: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    label_prior: Option<Vec<f64>>,
}

impl SynthFlags {
    fn any(&self) -> bool {
        self.num_labels.is_some()
            || self.n.is_some()
            || self.sharpness.is_some()
            || self.accuracy.is_some()
            || self.temperature.is_some()
            || self.label_prior.is_some()
    }

    fn apply(&self, src: &mut SynthSource) -> Result<()> {
        if let Some(k) = self.num_labels {
            src.num_labels = k;
        }
        if let Some(n) = self.n {
            src.n = n;
        }
        if let Some(s) = self.sharpness {
            src.sharpness = s;
        }
        if let Some(a) = self.accuracy {
            src.sharpness = sharpness_for_accuracy(src.num_labels, a)?;
        }
        if let Some(t) = self.temperature {
            src.temperature = t;
        }
        if let Some(p) = &self.label_prior {
            src.label_prior = Some(p.clone());
        }
        Ok(())
    }
}

#[derive(Args, Default)]
struct ShiftFlags {
    #[arg(long)]
    shift_kind: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    shift_magnitude: Option<f64>,
    #[arg(long)]
    shift_schedule: Option<String>,
    #[arg(long)]
    shift_target: Option<usize>,
}

impl ShiftFlags {
    fn apply(&self, shift: &mut ShiftSpec) -> Result<()> {
        if let Some(k) = &self.shift_kind {
            shift.kind = k.parse::<ShiftKind>()?;
        }
        if let Some(m) = self.shift_magnitude {
            shift.magnitude = m;
        }
        if let Some(s) = &self.shift_schedule {
            shift.schedule = s.parse::<ShiftSchedule>()?;
        }
        if let Some(t) = self.shift_target {
            shift.target = Label(t);
        }
        Ok(())
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path; companion CSV tables are written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    cal_ratio: Option<f64>,
    /// Use a score file as the data source.
    #[arg(long, conflicts_with_all = ["num_labels", "n", "sharpness", "accuracy", "temperature", "label_prior"])]
    scores: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthFlags,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss_bound: Option<f64>,
    #[arg(long)]
    stream_length: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[command(flatten)]
    shift: ShiftFlags,
    #[arg(long)]
    trajectory_alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    bench_sizes: Option<Vec<usize>>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = match &self.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(alphas, trials, cal_ratio, gamma, batch_size, seed, loss_bound, stream_length, ratios);
        if let Some(a) = self.trajectory_alpha {
            cfg.trajectory_alpha = Some(a);
        }
        if let Some(sizes) = &self.bench_sizes {
            cfg.bench.sizes = sizes.clone();
        }
        if let Some(path) = &self.scores {
            cfg.source = DataSource::ScoreFile {
                path: path.clone(),
                sha256: None,
            };
        } else if self.synth.any() {
            let mut src = match &cfg.source {
                DataSource::Synthetic(src) => src.clone(),
                DataSource::ScoreFile { .. } => SynthSource::with_accuracy(DEFAULT_NUM_LABELS, 2000, DEFAULT_ACCURACY)?,
            };
            self.synth.apply(&mut src)?;
            cfg.source = DataSource::Synthetic(src);
        }
        self.shift.apply(&mut cfg.shift)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    shift: ShiftFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let file = read_scores(&args.scores)?;
    let alpha = RiskLevel::new(args.alpha)?;
    let n_cal = file.dataset.len();
    let cal = match args.method {
        CalibrationMethod::Scp => {
            let t = calibrate_quantile(&file.dataset, alpha)?;
            CalibrationFile {
                method: Method::Scp,
                alpha: args.alpha,
                n_cal,
                threshold: t.q_hat,
                loss_bound: None,
                risk_bound: None,
                label_names: file.label_names,
            }
        }
        CalibrationMethod::Rccp => {
            let t = calibrate_beta(&file.dataset, alpha, args.loss_bound)?;
            CalibrationFile {
                method: Method::Rccp,
                alpha: args.alpha,
                n_cal,
                threshold: t.beta_hat,
                loss_bound: Some(t.loss_bound),
                risk_bound: Some(t.risk_bound),
                label_names: file.label_names,
            }
        }
    };
    info!("{} threshold {:?} from {} examples", cal.method.as_str(), cal.threshold, n_cal);
    write_calibration(&cal, &args.out)
}

fn predict(args: &PredictArgs) -> Result<()> {
    let cal = read_calibration(&args.calibration)?;
    let file = read_scores(&args.scores)?;
    if file.label_names != cal.label_names {
        return Err(Error::InvalidParameter {
            name: "scores",
            reason: format!("label names {:?} differ from calibration labels {:?}", file.label_names, cal.label_names),
        });
    }
    let sets: Vec<_> = file.dataset.iter().map(|e| cal.threshold.predict(&e.probs)).collect();
    let table = io::predictions_table(&file, &sets)?;
    match &args.out {
        Some(path) => fs::write(path, table)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&table)?;
        }
    }
    Ok(())
}

fn generate_file(args: &GenerateArgs) -> Result<()> {
    let mut src = SynthSource::with_accuracy(DEFAULT_NUM_LABELS, 2000, DEFAULT_ACCURACY)?;
    args.synth.apply(&mut src)?;
    let cfg: SynthConfig = src.config(args.seed)?;
    let mut shift = ShiftSpec::none();
    args.shift.apply(&mut shift)?;
    let data = if shift.magnitude == 0.0 {
        generate(&cfg)?
    } else {
        generate_shifted(&cfg, &shift)?
    };
    let names = default_label_names(data.num_labels());
    write_scores(&ScoreFile::new(data, names)?, &args.out)
}

fn experiment(kind: &ExperimentCommand) -> Result<()> {
    let (args, run): (&ExperimentArgs, fn(&ExperimentConfig) -> Result<io::ReportDocument>) = match kind {
        ExperimentCommand::Scp(a) => (a, harness::run_scp_experiment),
        ExperimentCommand::Rccp(a) => (a, harness::run_rccp_experiment),
        ExperimentCommand::Ablation(a) => (a, harness::run_ratio_ablation),
        ExperimentCommand::Shift(a) => (a, harness::run_shift_experiment),
        ExperimentCommand::Bench(a) => (a, harness::run_cost_benchmark),
    };
    let cfg = args.resolve()?;
    if let DataSource::ScoreFile { .. } = cfg.source {
        info!("pool of {} examples", load_pool(&cfg)?.len());
    }
    let report = run(&cfg)?;
    for flag in &report.flags {
        log::warn!("{flag}");
    }
    for path in write_report(&report, &args.out)? {
        info!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let command = cli.command;
    let body = move || match &command {
        Command::Calibrate(a) => calibrate(a),
        Command::Predict(a) => predict(a),
        Command::Generate(a) => generate_file(a),
        Command::Experiment { kind } => experiment(kind),
    };
    match cli.threads {
        Some(t) => with_threads(t, body)?,
        None => body(),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        "io" => 3,
        "parse" => 4,
        "config" => 5,
        _ => 6,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            ExitCode::from(exit_code(&err))
        }
    }
}
