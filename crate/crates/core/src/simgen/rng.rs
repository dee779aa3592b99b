//! Counter-based random streams.
//!
//! A stream is identified by `(seed, replication, subject, tag)`; its `k`-th
//! output is a pure function of the key and `k`, so streams never overlap
//! and replications can be generated in any order or in parallel.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-variable stream tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Covariates = 1,
    Failure = 2,
    TrialCensoring = 3,
    FollowUpCensoring = 4,
    Gap = 5,
    Linkage = 6,
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn new(seed: u64, replication: u64, subject: u64, tag: Tag) -> Self {
        let key = [replication, subject, tag as u64]
            .into_iter()
            .fold(mix(seed.wrapping_add(GOLDEN)), |k, v| mix(k.wrapping_add(GOLDEN) ^ mix(v)));
        StreamRng { key, counter: 0 }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
