//! Calibrate on the base generator, test on an overconfident one, and
//! compare split conformal with the online martingale method.

use riskcp::harness::{run_shift_experiment, ExperimentConfig};
use riskcp::io::Method;
use riskcp::synth::{ShiftKind, ShiftSpec};

fn main() -> riskcp::Result<()> {
    for magnitude in [0.0, -0.75, -1.5] {
        let cfg = ExperimentConfig {
            alphas: vec![0.2],
            trials: 20,
            shift: ShiftSpec::new(ShiftKind::TemperatureShift, magnitude),
            ..ExperimentConfig::default()
        };
        let report = run_shift_experiment(&cfg)?;
        let cov = |m| report.row(m, 0.2).map(|r| r.metrics.mean_ecr).unwrap_or(f64::NAN);
        println!(
            "log temperature multiplier {magnitude:+}: scp coverage {:.3}, martingale coverage {:.3}",
            cov(Method::Scp),
            cov(Method::Martingale)
        );
    }
    Ok(())
}
