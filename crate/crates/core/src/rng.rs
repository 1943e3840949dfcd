//! Named random streams derived from a single root seed.
//!
//! Each consumer asks for a stream by component name and index, e.g.
//! `("cv-fold", 3)`. Streams are independent of the order in which they are
//! requested, so parallel execution cannot change any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    root: u64,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Seed for the stream `(name, index)`.
    pub fn seed(&self, name: &str, index: u64) -> u64 {
        let mut h = fnv1a(name.as_bytes()) ^ splitmix(self.root);
        h = splitmix(h ^ splitmix(index.wrapping_add(0x632b_e59b_d9b4_e019)));
        h
    }

    pub fn rng(&self, name: &str, index: u64) -> Rng {
        Rng::seed_from_u64(self.seed(name, index))
    }

    /// A child stream, for handing a sub-component its own namespace.
    pub fn child(&self, name: &str, index: u64) -> SeedStream {
        SeedStream::new(self.seed(name, index))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
