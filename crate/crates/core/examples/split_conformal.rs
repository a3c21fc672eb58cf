//! Calibrate split conformal prediction on synthetic scores and check the
//! empirical coverage on held-out data.

use riskcp::synth::{generate, split, SynthConfig};
use riskcp::{calibrate_quantile, ecr, predict_set, apss, RiskLevel};

fn main() -> riskcp::Result<()> {
    let data = generate(&SynthConfig::with_accuracy(6, 4000, 0.4, 7)?)?;
    let (cal, test) = split(&data, 0.5, 1)?;
    for a in [0.05, 0.1, 0.2, 0.4] {
        let q = calibrate_quantile(&cal, RiskLevel::new(a)?)?;
        let sets: Vec<_> = test.iter().map(|e| predict_set(&e.probs, &q)).collect();
        println!(
            "alpha={a:<4} q_hat={:?} coverage={:.3} mean set size={:.2}",
            q.q_hat,
            ecr(&sets, &test.labels())?,
            apss(&sets)?
        );
    }
    Ok(())
}
