//! Deterministic RNG streams. Every stochastic routine derives its generator
//! from (seed, purpose, replica) so that results never depend on thread
//! scheduling, and so that paired experiment arms can share randomness by
//! sharing the triple (common random numbers).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tag for the n-player and tagged-deviator simulators. The two share
/// one tag on purpose: a deviation arm must replay the base arm's randomness.
pub const PURPOSE_PLAYERS: u16 = 0;
/// Purpose tag for the single limit-player simulator.
pub const PURPOSE_LIMIT: u16 = 1;
/// Purpose tag for bootstrap resampling.
pub const PURPOSE_BOOTSTRAP: u16 = 2;
/// Purpose tag for smoothing-node draws in functional regularization.
pub const PURPOSE_SMOOTHING: u16 = 3;
pub const PURPOSE_PROBE: u16 = 4;

const REP_BITS: u32 = 48;

/// Generator for one (purpose, replica) cell of the seed's stream space.
/// Replica indices must stay below 2^48.
pub fn stream(seed: u64, purpose: u16, rep: u64) -> ChaCha12Rng {
    assert!(rep < 1u64 << REP_BITS, "replica index exceeds the stream space");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << REP_BITS) | rep);
    rng
}
