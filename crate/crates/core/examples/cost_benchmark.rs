//! Calibration cost of split conformal, the sorted risk-control search and
//! the naive traversal.

use riskcp::harness::{run_cost_benchmark, ExperimentConfig};

fn main() -> riskcp::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.bench.sizes = vec![1_000, 10_000, 30_000];
    let report = run_cost_benchmark(&cfg)?;
    let bench = report.benchmark.expect("benchmark section");
    for t in &bench.timings {
        println!("n={:<6} {:<12} candidates={:<6} {:.6} s", t.n, t.method, t.candidates, t.seconds);
    }
    for t in &bench.scaling {
        println!("scaling: M={:<5} {:.3e} s per candidate", t.candidates, t.seconds / t.candidates as f64);
    }
    println!("thresholds agree: {}; spread {:.2}", bench.thresholds_agree, bench.per_candidate_spread);
    Ok(())
}
