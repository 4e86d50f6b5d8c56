//! Seeded, random-access random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, tag, index)`, so draws for iteration `k` never depend on how many
//! draws happened at earlier iterations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_DIRECTION: u64 = 0x5eed_0001;
pub(crate) const TAG_ROTATION: u64 = 0x5eed_0002;
pub(crate) const TAG_MAGNITUDES: u64 = 0x5eed_0003;
pub(crate) const TAG_COIN_B: u64 = 0x5eed_0004;
pub(crate) const TAG_NOISE_MATRIX: u64 = 0x5eed_0005;
pub(crate) const TAG_COIN_A: u64 = 0x5eed_0006;

/// SplitMix64 finalizer; decorrelates nearby seeds before they reach ChaCha.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(tag)));
    rng.set_stream(index);
    rng
}
