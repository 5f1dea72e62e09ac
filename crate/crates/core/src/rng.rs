//! Random sources for trajectory sampling.
//!
//! Simulation code draws through the [`RandomSource`] trait so tests can
//! substitute scripted delays. The production source is ChaCha8, which is
//! seedable, portable and fast; per-trajectory sources derive from a master
//! seed and a trajectory index so that results do not depend on how
//! trajectories are distributed over worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Source of the random variates used by the simulator.
pub trait RandomSource {
    /// Uniform draw in `[0, 1)`.
    fn next_uniform(&mut self) -> f64;

    /// Exponential delay with the given rate (mean `1/rate`).
    fn sample_exp(&mut self, rate: f64) -> f64 {
        let u = self.next_uniform();
        // Guard against ln(0); next_uniform may return exactly 0.
        let u = if u <= 0.0 { f64::MIN_POSITIVE } else { u };
        -u.ln() / rate
    }

    /// Uniform delay in `[lo, hi)`.
    fn sample_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }
}

/// Default reproducible source backed by ChaCha8.
pub struct SimRng {
    rng: ChaCha8Rng,
}

impl SimRng {
    pub fn seed_from(seed: u64) -> SimRng {
        SimRng {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Source for one trajectory of a sampling experiment. The derivation
    /// mixes the master seed with the trajectory index, so trajectory `i`
    /// sees the same stream no matter which worker runs it.
    pub fn for_trajectory(master_seed: u64, index: u64) -> SimRng {
        SimRng::seed_from(mix(master_seed, index))
    }
}

impl RandomSource for SimRng {
    #[inline]
    fn next_uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

/// SplitMix64-style mixing of (seed, index) into one 64-bit state.
fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
