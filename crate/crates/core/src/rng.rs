//! Seedable random streams.
//!
//! Every draw site asks for its own stream by label (and optionally an
//! index). The stream seed is derived by FNV-1a hashing the label and mixing
//! it with the root seed and index through SplitMix64; the stream itself is
//! ChaCha8. Streams therefore never depend on how many draws another site
//! made, so adding a layer does not perturb the initialization of earlier
//! layers, and results are identical on every platform.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A child generator for a named site. Children can be split further.
    pub fn fork(&self, label: &str) -> Rng {
        Rng {
            seed: splitmix64(self.seed ^ splitmix64(fnv1a(label))),
        }
    }

    /// A child generator for the `index`-th draw of a named site.
    pub fn fork_indexed(&self, label: &str, index: u64) -> Rng {
        let base = self.fork(label);
        Rng {
            seed: splitmix64(base.seed ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn stream(&self) -> Stream {
        Stream {
            inner: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }
}

/// A sequential sample stream.
pub struct Stream {
    inner: ChaCha8Rng,
}

impl Stream {
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform sample in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Fisher-Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.index(i + 1);
            p.swap(i, j);
        }
        p
    }
}
