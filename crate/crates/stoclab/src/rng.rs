//! Seeded, splittable random streams.
//!
//! Each stream is a ChaCha8 keystream keyed by the root seed, with the
//! stream id derived from (experiment, cell, replicate). Streams never
//! overlap, so sweeps can hand one to every cell and run them in any order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Coordinates of a stream below the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub experiment: u64,
    pub cell: u64,
    pub replicate: u64,
}

impl StreamId {
    pub const fn new(experiment: u64, cell: u64, replicate: u64) -> Self {
        Self { experiment, cell, replicate }
    }

    fn mix(self) -> u64 {
        splitmix64(splitmix64(splitmix64(self.experiment) ^ self.cell) ^ self.replicate)
    }
}

#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(root_seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
        rng.set_stream(id.mix());
        Self { rng, spare: None }
    }

    /// Shorthand for a single-purpose stream.
    pub fn from_seed(root_seed: u64) -> Self {
        Self::new(root_seed, StreamId::new(0, 0, 0))
    }

    /// Child stream for shard `i` of this stream's work; independent of how
    /// much of the parent has been consumed.
    pub fn child(root_seed: u64, id: StreamId, shard: u64) -> Self {
        let id = StreamId::new(id.experiment, splitmix64(id.cell) ^ shard.rotate_left(17), id.replicate);
        Self::new(root_seed, id)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1].
    #[inline]
    fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by Box–Muller; the second variate is cached.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform_open0().ln()).sqrt();
        let t = std::f64::consts::TAU * self.uniform();
        let (s, c) = t.sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    /// Uniform ±1 with equal mass.
    #[inline]
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}
