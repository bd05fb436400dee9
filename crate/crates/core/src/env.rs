//! Simulator interface shared by the experimental domains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Random stream used by every simulator.
pub type SimRng = ChaCha8Rng;

/// Seeded stream for item `index` of a run keyed by `seed`.
///
/// Streams depend only on `(seed, index)`, so work split across threads
/// reproduces the sequential result.
pub fn derived_rng(seed: u64, index: u64) -> SimRng {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub next: u64,
    /// Reward to the agent (first player).
    pub reward: f64,
    pub terminal: bool,
}

/// A two-player zero-sum simulator over integer-encoded states.
pub trait Environment: Send + Sync {
    fn id(&self) -> String;
    fn n_agent_actions(&self) -> usize;
    fn n_opp_actions(&self) -> usize;
    fn discount(&self) -> f64;
    fn reset(&self, rng: &mut SimRng) -> u64;
    fn step(&self, state: u64, a: usize, o: usize, rng: &mut SimRng) -> Result<Step>;
    /// Whether either player may take either side (mirror-symmetric games).
    fn symmetric_roles(&self) -> bool;
}
