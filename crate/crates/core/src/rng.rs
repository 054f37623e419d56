//! Seeded random streams.
//!
//! Every stochastic operation takes its generator explicitly. Trials derive
//! independent streams from one 64-bit seed by selecting a ChaCha stream id,
//! so trial `k` draws the same numbers whatever order trials execute in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::C64;

pub type SimRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Stream `trial` of the generator keyed by `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// One draw from CN(0, variance): real and imaginary parts each N(0, variance/2).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let sd = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(sd * re, sd * im)
}

/// Uniform point on the complex unit circle, drawn as `u/|u|` with `u ~ CN(0, 1)`.
pub fn unit_phase<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    loop {
        let u = complex_normal(rng, 1.0);
        let n = u.norm();
        if n > 0.0 {
            return u / n;
        }
    }
}
