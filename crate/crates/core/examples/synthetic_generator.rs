//! Tune the generator to a target accuracy and inspect shifted variants.

use riskcp::synth::{apply_shift, generate, sharpness_for_accuracy, top1_accuracy, ShiftKind, ShiftSpec, SynthConfig};

fn accuracy(cfg: &SynthConfig) -> riskcp::Result<f64> {
    let data = generate(cfg)?;
    Ok(data.iter().filter(|e| e.probs.argmax() == e.label).count() as f64 / data.len() as f64)
}

fn main() -> riskcp::Result<()> {
    for target in [0.3, 0.4, 0.6, 0.9] {
        let mu = sharpness_for_accuracy(6, target)?;
        let cfg = SynthConfig::new(6, 20_000, mu, 1)?;
        println!(
            "target {target}: sharpness {mu:.4}, exact {:.4}, sampled {:.4}",
            top1_accuracy(6, mu),
            accuracy(&cfg)?
        );
    }
    let base = SynthConfig::with_accuracy(4, 20_000, 0.5, 1)?;
    let prior = apply_shift(&base, &ShiftSpec::new(ShiftKind::PriorShift, 1.0))?;
    println!("prior after shift: {:?}", prior.label_prior);
    let sharp = apply_shift(&base, &ShiftSpec::new(ShiftKind::SharpnessShift, 0.5))?;
    println!("sampled accuracy after sharpening: {:.4}", accuracy(&sharp)?);
    Ok(())
}
