//! Seeded random-number streams.
//!
//! Every chain owns one `ChainRng` stream and all of its randomness (batch
//! draws, estimator noise, Brownian increments) comes from that stream in a
//! fixed order. Gaussian draws always go through [`standard_normal`], which
//! uses `rand_distr::StandardNormal` (ziggurat) as the single normal
//! generation method, so trajectories are bit-reproducible across runs and
//! across execution modes.

use rand::Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

/// The RNG used for all sampling. ChaCha8 is seedable from a `u64`, portable
/// across platforms, and fast enough that it never dominates a step.
pub type ChainRng = rand_chacha::ChaCha8Rng;

/// Builds a stream from a bare seed.
pub fn seeded_rng(seed: u64) -> ChainRng {
    ChainRng::seed_from_u64(seed)
}

/// SplitMix64 output function. Used to derive independent stream seeds from
/// a base seed without correlated low bits.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed for sub-stream `stream` of `base`. Trials fold the trial
/// index through this; chains fold their chain index through the trial seed.
/// Auxiliary streams (swap decisions, dataset synthesis) use indices well
/// above any chain count so they never collide with chain streams.
pub fn split_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(1)))
}

/// One standard normal draw from the stream.
pub fn standard_normal(rng: &mut ChainRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Stream index space for auxiliary RNGs, kept away from chain indices.
pub const AUX_STREAM_BASE: u64 = 1 << 32;
