//! Random streams.
//!
//! All randomness derives from a single 64-bit master seed. Path `i` draws from
//! ChaCha8 keyed by the master seed with stream id `i`, so a path's increments do
//! not depend on which worker ran it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Name of the normal generation method, recorded in artifact metadata.
pub const NORMAL_METHOD: &str = "chacha8-stream/ziggurat (rand_distr::StandardNormal)";

/// Stream ids at or above this offset are reserved for auxiliary draws
/// (outer samples, bootstrap) so they never collide with path streams.
pub const AUX_STREAM_BASE: u64 = 1 << 62;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent substream `stream` of `master_seed`.
pub fn substream(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Fills `out` with independent `N(0, variance)` draws.
#[inline]
pub fn fill_normal(rng: &mut ChaCha8Rng, sd: f64, out: &mut [f64]) {
    for o in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *o = sd * z;
    }
}
