//! Deterministic seeding and Gaussian noise streams.
//!
//! Every random draw in this crate comes from a ChaCha stream whose seed is
//! derived from a master seed plus a list of integer tags (domain, sample
//! index, channel, ...). Derivation is a splitmix64 fold, so any unit of work
//! can be re-run in isolation and results never depend on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Tag namespaces used when deriving per-task seeds from a master seed.
pub mod domain {
    /// Candidate coefficient draws in the random search.
    pub const COEFFICIENTS: u64 = 0x01;
    /// Stability / diversity probe planes.
    pub const PROBE: u64 = 0x02;
    /// Per-sample perturbations when poisoning a dataset.
    pub const SAMPLE: u64 = 0x03;
    /// Per-channel init bands within one sample.
    pub const CHANNEL: u64 = 0x04;
    /// Poison-subset selection for fractional poisoning.
    pub const SUBSET: u64 = 0x05;
    /// Separability-audit sample generation.
    pub const AUDIT: u64 = 0x06;
    /// Class-wise baseline noise.
    pub const CLASS_NOISE: u64 = 0x07;
}

/// One splitmix64 step.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and an ordered tag list.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    for &tag in tags {
        let mut s = state ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03);
        state = splitmix64(&mut s);
    }
    let mut s = state;
    splitmix64(&mut s)
}

/// A seeded stream of standard-normal draws.
///
/// The construction seed is kept so provenance records can point back at it.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), seed }
    }

    /// The seed this stream was constructed from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next N(0, 1) draw.
    pub fn next_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Next draw from the underlying uniform u64 stream.
    pub fn next_u64(&mut self) -> u64 {
        self.rng.gen()
    }
}
