//! Counter-derived random streams.
//!
//! Every Monte-Carlo draw is identified by `(seed, domain, index)`. The domain
//! separates independent uses of the same seed (geometry, channels, symbols)
//! and the index selects one of the 2^64 ChaCha streams, so results never
//! depend on how work is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{CVec, C64};

pub const DOMAIN_GEOMETRY: u64 = 1;
pub const DOMAIN_CHANNEL: u64 = 2;
pub const DOMAIN_PILOT: u64 = 3;
pub const DOMAIN_DOWNLINK: u64 = 4;

pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let key = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Circularly-symmetric complex Gaussian with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVec {
    CVec::from_fn(len, |_, _| complex_normal(rng, variance))
}

/// Uniform phase on [-π, π).
pub fn uniform_phase<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    std::f64::consts::PI * (2.0 * u - 1.0)
}
