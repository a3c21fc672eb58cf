//! Coverage and its dispersion across calibration ratios.

use riskcp::harness::{run_ratio_ablation, DataSource, ExperimentConfig, SynthSource};

fn main() -> riskcp::Result<()> {
    let cfg = ExperimentConfig {
        alphas: vec![0.2],
        source: DataSource::Synthetic(SynthSource::with_accuracy(6, 4000, 0.4)?),
        ..ExperimentConfig::default()
    };
    let report = run_ratio_ablation(&cfg)?;
    println!("ratio  mean_ecr  sd_ecr  sd_conditional");
    for row in &report.results {
        println!(
            "{:<5}  {:.4}    {:.4}  {:.4}",
            row.cal_ratio.unwrap_or_default(),
            row.metrics.mean_ecr,
            row.metrics.sd_ecr,
            row.summary["sd_pool_coverage"]
        );
    }
    Ok(())
}
