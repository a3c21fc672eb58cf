//! Risk-controlled calibration: the certified bound, the infeasible regime
//! and the naive reference search.

use riskcp::rccp::{candidate_grid, naive_calibrate_beta};
use riskcp::synth::{generate, SynthConfig};
use riskcp::{calibrate_beta, calibrate_quantile, RiskLevel};

fn main() -> riskcp::Result<()> {
    let cal = generate(&SynthConfig::with_accuracy(6, 1000, 0.4, 3)?)?;
    let alpha = RiskLevel::new(0.1)?;
    for bound in [0.0, 0.5, 1.0, 2.0] {
        let t = calibrate_beta(&cal, alpha, bound)?;
        println!("B={bound}: beta_hat={:?} certified risk={:.4}", t.beta_hat, t.risk_bound);
    }

    let scp = calibrate_quantile(&cal, alpha)?;
    let scores = cal.scores();
    let naive = naive_calibrate_beta(&scores, alpha, 1.0, &candidate_grid(&scores))?;
    println!("B=1 matches split conformal: {}", naive.beta_hat == scp.q_hat);

    // With 9 calibration points and B = 1 the smallest attainable bound is 0.1.
    let tiny = generate(&SynthConfig::with_accuracy(6, 9, 0.4, 3)?)?;
    let t = calibrate_beta(&tiny, RiskLevel::new(0.05)?, 1.0)?;
    println!("n=9, alpha=0.05: {:?}", t.beta_hat);
    Ok(())
}
