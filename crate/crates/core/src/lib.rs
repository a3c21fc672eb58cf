//! Conformal prediction sets for classifiers: split conformal, risk-controlled
//! and online martingale calibration, with a synthetic classifier simulator and
//! a reproducible experiment harness.
//!
//! ```
//! use riskcp::{calibrate_quantile, predict_set, RiskLevel, ScoreDataset, LabeledExample, ProbabilityVector, Label};
//!
//! let cal = ScoreDataset::new(
//!     (0..9)
//!         .map(|i| {
//!             let p = 0.1 * (i + 1) as f64;
//!             LabeledExample::new(ProbabilityVector::new(vec![p, 1.0 - p]).unwrap(), Label(0)).unwrap()
//!         })
//!         .collect(),
//!     2,
//! )
//! .unwrap();
//! let q = calibrate_quantile(&cal, RiskLevel::new(0.2).unwrap()).unwrap();
//! let set = predict_set(&ProbabilityVector::new(vec![0.7, 0.3]).unwrap(), &q);
//! assert!(set.contains(Label(0)));
//! ```

pub mod data;
pub mod error;
pub mod harness;
pub mod io;
pub mod martingale;
pub mod metrics;
pub mod rccp;
pub mod rng;
pub mod scp;
pub mod synth;

pub use data::{validate_dataset, Cutoff, Label, LabeledExample, PredictionSet, ProbabilityVector, RiskLevel, ScoreDataset};
pub use error::{Error, Result};
pub use martingale::{evalue, martingale_update, predict_set_online, Batch, MartingaleState, MixingRate};
pub use metrics::{apss, ecr, AggregateMetrics, TrialMetrics};
pub use rccp::{calibrate_beta, empirical_risk, naive_calibrate_beta, prediction_set_beta, RccpThreshold};
pub use scp::{calibrate_quantile, nonconformity_score, predict_set, ScpThreshold};
