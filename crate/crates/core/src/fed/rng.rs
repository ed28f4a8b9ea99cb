//! Per-(client, round, purpose) random streams.
//!
//! Every random decision in a run draws from a stream keyed by the master
//! seed and the identity of the work item, never from shared state, so the
//! outcome does not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream owner used for server-side decisions (client sampling, init).
pub const SERVER: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Sampling,
    LocalTrain,
    /// One stream per DKD step.
    Distill(u64),
    /// Dataset generation and splitting, one stream per tag.
    Data(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Sampling => 2,
            Purpose::LocalTrain => 3,
            Purpose::Distill(step) => 0x1000 + step,
            Purpose::Data(tag) => (1 << 40) + tag,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, owner: u64, round: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(master);
    for part in [owner, round, purpose.tag()] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn stream(master: u64, owner: u64, round: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, owner, round, purpose))
}
