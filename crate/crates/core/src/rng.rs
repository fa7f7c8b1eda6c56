//! Seeded, splittable random streams.
//!
//! Every consumer of randomness receives its own [`RngState`], derived from a
//! run seed plus a stream identifier. ChaCha8 is counter based, so a given
//! `(seed, stream)` pair produces the same sequence on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Well-known stream identifiers used by the harness.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const LONG_TAIL: u64 = 3;
    pub const NOISE_TRAIN: u64 = 4;
    pub const NOISE_VAL: u64 = 5;
    pub const REFERENCE: u64 = 6;
    pub const INIT_A: u64 = 7;
    pub const INIT_B: u64 = 8;
    pub const TRAIN: u64 = 9;
}

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derives an independent child stream. The child depends only on
    /// `(seed, stream, label)`, never on how many values this state has drawn.
    pub fn split(&self, label: u64) -> RngState {
        let child = splitmix64(self.stream ^ splitmix64(label.wrapping_add(1)));
        RngState::with_stream(self.seed, child)
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
