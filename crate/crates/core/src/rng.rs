//! Reproducible random streams keyed by `(seed, replication, purpose, index)`.
//!
//! Every stream is derived from its key alone, so results do not depend on
//! how replications are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Regressors,
    Treatment,
    Outcomes,
    Bootstrap,
    Calibration,
    Placebo,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Regressors => 0x5245_4752,
            Purpose::Treatment => 0x5452_4541,
            Purpose::Outcomes => 0x4f55_5443,
            Purpose::Bootstrap => 0x424f_4f54,
            Purpose::Calibration => 0x4341_4c49,
            Purpose::Placebo => 0x504c_4143,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one `(seed, replication, purpose, index)` key.
pub fn substream(seed: u64, replication: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for part in [replication, purpose.tag(), index] {
        h = splitmix(h ^ part);
    }
    let mut key = [0u8; 32];
    let mut state = h;
    for chunk in key.chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Generator for one `(seed, replication, purpose)` key.
pub fn stream(seed: u64, replication: u64, purpose: Purpose) -> ChaCha8Rng {
    substream(seed, replication, purpose, u64::MAX)
}
