//! Deterministic random streams.
//!
//! Every random operation takes an explicit [`Stream`]. Streams form a tree:
//! a child is derived from its parent key and an index, so work units keyed
//! by `(replicate, permutation, position)` draw identical numbers no matter
//! which thread runs them or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream {
    key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a; stable across toolchains, unlike `DefaultHasher`.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self { key: splitmix64(seed) }
    }

    pub fn child(self, index: u64) -> Self {
        Self { key: splitmix64(self.key ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019))) }
    }

    pub fn named(self, tag: &str) -> Self {
        self.child(fnv1a(tag.as_bytes()))
    }

    pub fn key(self) -> u64 {
        self.key
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}
