//! Per-path random streams and Poisson sampling.
//!
//! Every path owns a ChaCha8 stream selected by `(seed, stream)`. The
//! generator is counter based, so a path's draws depend only on its own
//! stream index and never on how paths are split across workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

/// Above this mean, Poisson counts come from `rand_distr` instead of inversion.
const INVERSION_LIMIT: f64 = 500.0;

pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on the open interval (0, 1).
pub fn open_uniform<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Poisson count with the given mean by inversion of `u ∈ (0,1)`.
///
/// Monotone in `u`, so `u` and `1 − u` give antithetic counts. Large means
/// fall back to `rand_distr`, drawing from `rng`.
pub fn poisson_count<R: Rng>(mean: f64, u: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean > INVERSION_LIMIT {
        return Poisson::new(mean).map_or(0, |d| d.sample(rng) as u64);
    }
    let mut k = 0u64;
    let mut pk = (-mean).exp();
    let mut cdf = pk;
    // Cap guards against rounding leaving cdf just short of u near 1.
    let cap = (mean + 40.0 * mean.sqrt() + 40.0) as u64;
    while u > cdf && k < cap {
        k += 1;
        pk *= mean / k as f64;
        cdf += pk;
    }
    k
}
