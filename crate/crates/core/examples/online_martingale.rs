//! Step the mini-batch martingale by hand, one batch at a time.

use riskcp::martingale::{advance_state, Batch, MartingaleState, MixingRate};
use riskcp::synth::{generate, SynthConfig};
use riskcp::{predict_set_online, RiskLevel};

fn main() -> riskcp::Result<()> {
    let data = generate(&SynthConfig::with_accuracy(4, 60, 0.9, 11)?)?;
    // At alpha = 0.5 a label is dropped once its candidate value reaches 2.
    let alpha = RiskLevel::new(0.5)?;
    let mut state = MartingaleState::new(MixingRate::new(0.5)?);
    for chunk in data.examples().chunks_exact(6) {
        let test = &chunk[5];
        let batch = Batch::new(chunk[..5].to_vec(), test.probs.clone(), Some(test.label))?;
        let out = predict_set_online(&state, &batch, alpha);
        state = advance_state(&state, &batch)?;
        println!(
            "step {:>2}: set {:?} covered={} M={:.3}",
            state.step(),
            out.set.labels().iter().map(|l| l.index()).collect::<Vec<_>>(),
            out.set.contains(test.label),
            state.value()
        );
    }
    Ok(())
}
