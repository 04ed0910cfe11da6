//! Seeded, counter-based random streams.
//!
//! Every stochastic choice in the pipeline (crop offsets, fold permutation,
//! weight init, batch order, dropout masks) draws from a ChaCha8 stream keyed
//! by a 64-bit seed and selected by a 64-bit stream id, so results depend only
//! on `(seed, stream)` and never on thread scheduling or platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Opens the stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit digest of a string (first eight bytes of its SHA-256).
pub fn stable_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Uniform integer in `0..=max`.
pub fn uniform_inclusive(rng: &mut ChaCha8Rng, max: u64) -> u64 {
    if max == 0 {
        0
    } else {
        rng.random_range(0..=max)
    }
}

/// In-place Fisher-Yates shuffle driven by [`uniform_inclusive`].
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_inclusive(rng, i as u64) as usize;
        items.swap(i, j);
    }
}

/// Uniform float in `[-bound, bound)`.
pub fn uniform_symmetric(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    let u: f64 = rng.random();
    (2.0 * u - 1.0) * bound
}
