//! Seed derivation and the counter-based innovation stream.
//!
//! Every random draw in the crate is addressed by `(seed, counter)`, so a path
//! or restart produces the same numbers no matter which worker evaluates it.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a parent seed, a label and an index,
/// e.g. `derive_seed(seed, "path", n)`.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ h) ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Maps 64 random bits to the open interval (0, 1).
#[inline]
pub fn bits_to_open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Uniform draws keyed by `(seed, t)`.
///
/// Draw `t` always lands at the same position of the ChaCha keystream, so
/// [`UniformStream::at`] and sequential [`UniformStream::next_uniform`] agree.
#[derive(Clone, Debug)]
pub struct UniformStream {
    rng: ChaCha8Rng,
    counter: u64,
}

impl UniformStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            counter: 0,
        }
    }

    /// The `t`-th draw of the stream.
    pub fn at(&mut self, t: u64) -> f64 {
        self.seek(t);
        self.next_uniform()
    }

    pub fn seek(&mut self, t: u64) {
        self.rng.set_word_pos(u128::from(t) * 2);
        self.counter = t;
    }

    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        self.counter += 1;
        bits_to_open_unit(self.rng.next_u64())
    }

    pub fn position(&self) -> u64 {
        self.counter
    }
}
