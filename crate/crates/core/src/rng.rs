//! Deterministic random streams.
//!
//! Every run owns one ChaCha8 stream seeded from the run seed. Auxiliary
//! consumers (coding checks, schedule generation) derive their own streams
//! with [`mix`]; enabling them leaves the protocol's draws unchanged.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream tag for the protocol's join decisions.
pub const STREAM_PROTOCOL: u64 = 0;
/// Stream tag for coefficient and payload draws in coding checks.
pub const STREAM_CODING: u64 = 1;
/// Stream tag for randomized arrival schedules.
pub const STREAM_SCHEDULE: u64 = 2;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from `base` and an index.
///
/// `mix(base, index) = splitmix64(base ^ splitmix64(index))`. Used for sweep
/// cells and for per-purpose sub-streams of a run.
#[inline]
pub fn mix(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

/// Seeded random source used throughout the simulator.
#[derive(Debug, Clone)]
pub struct DetRng {
    inner: ChaCha8Rng,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A stream for `purpose` derived from a run seed.
    pub fn for_stream(seed: u64, purpose: u64) -> Self {
        Self::new(mix(seed, purpose))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `true` with probability `p` (one draw, always consumed).
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n` by rejection. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.inner.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Uniform byte in `1..=255`.
    pub fn nonzero_byte(&mut self) -> u8 {
        self.below(255) as u8 + 1
    }

    /// Uniform byte in `0..=255`.
    pub fn byte(&mut self) -> u8 {
        (self.inner.next_u64() >> 56) as u8
    }
}
