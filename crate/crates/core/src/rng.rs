//! Seeded random streams.
//!
//! Every stream is ChaCha8 (`rand_chacha` 0.3) keyed with
//! `SeedableRng::seed_from_u64(seed)` and then switched to stream number
//! `index` with `set_stream`. Distinct indices give non-overlapping
//! keystreams under the same key, so images never share randomness.
//!
//! Draws are defined here rather than through `rand` distributions so that
//! the mapping from raw words to values is fixed:
//! - `unit(rng)` is `(next_u64() >> 11) * 2^-53`, in `[0, 1)`;
//! - `pick(rng, n)` is `floor(unit(rng) * n)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn substream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[inline]
pub fn unit(rng: &mut Stream) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn pick(rng: &mut Stream, n: usize) -> usize {
    ((unit(rng) * n as f64) as usize).min(n - 1)
}
