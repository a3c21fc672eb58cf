//! Counter-based seed derivation.
//!
//! Every random quantity in an experiment comes from a seed derived as
//!
//! ```text
//! derive_seed(master, domain, index) =
//!     first u64 of ChaCha8(key = master, stream = (domain << 32) | index)
//! ```
//!
//! so trial `i` of any experiment sees the same randomness regardless of the
//! order or thread in which trials execute.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent purposes for which seeds are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// The data pool resampled across trials.
    Pool = 1,
    /// Calibration/test partition of trial `i`.
    Split = 2,
    /// Calibration pool of shift-experiment stream `i`.
    StreamPool = 3,
    /// Test stream `i`.
    StreamTest = 4,
    /// Batch sampling inside stream `i`.
    StreamBatches = 5,
    /// Datasets of the cost benchmark.
    Bench = 6,
}

pub fn derive_seed(master: u64, domain: Domain, index: u64) -> u64 {
    assert!(index < 1 << 32, "seed index {index} exceeds the 32-bit counter");
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((domain as u64) << 32) | index);
    rng.next_u64()
}
