//! Write a score file, read it back, calibrate from it and emit predictions.

use riskcp::io::{predictions_table, read_scores, write_scores, ScoreFile};
use riskcp::synth::{generate, split, SynthConfig};
use riskcp::{calibrate_quantile, predict_set, RiskLevel};

fn main() -> riskcp::Result<()> {
    let dir = std::env::temp_dir().join("riskcp-score-files");
    std::fs::create_dir_all(&dir)?;
    let names: Vec<String> = ["ang", "hap", "sad", "neu"].map(String::from).to_vec();
    let data = generate(&SynthConfig::with_accuracy(4, 400, 0.55, 2)?)?;
    let (cal, test) = split(&data, 0.5, 0)?;
    write_scores(&ScoreFile::new(cal, names.clone())?, dir.join("cal.csv"))?;
    write_scores(&ScoreFile::new(test, names)?, dir.join("test.csv"))?;

    let cal = read_scores(dir.join("cal.csv"))?;
    let test = read_scores(dir.join("test.csv"))?;
    let q = calibrate_quantile(&cal.dataset, RiskLevel::new(0.1)?)?;
    let sets: Vec<_> = test.dataset.iter().map(|e| predict_set(&e.probs, &q)).collect();
    let table = String::from_utf8(predictions_table(&test, &sets)?).expect("utf-8 table");
    for line in table.lines().take(6) {
        println!("{line}");
    }
    println!("files in {}", dir.display());
    Ok(())
}
