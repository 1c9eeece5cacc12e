//! Named random streams derived from one master seed.
//!
//! Every stochastic source in a run (one per link, one per client) draws from
//! its own ChaCha stream. Two runs that share a master seed therefore see the
//! same channel realizations no matter which coding scheme or control
//! parameter they use (common random numbers).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used for all simulation streams.
pub type StreamRng = ChaCha8Rng;

/// Which family a stream belongs to. Families never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Link,
    Arrival,
    Replicate,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Link => 1,
            StreamKind::Arrival => 2,
            StreamKind::Replicate => 3,
        }
    }
}

/// Opens stream `index` of `kind` under `master_seed`.
pub fn stream(master_seed: u64, kind: StreamKind, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((kind.tag() << 48) ^ index);
    rng
}

/// Derives the master seed for replicate `r` of a sweep.
pub fn replicate_seed(base_seed: u64, replicate: u64) -> u64 {
    if replicate == 0 {
        return base_seed;
    }
    splitmix64(base_seed ^ splitmix64(replicate.wrapping_add(StreamKind::Replicate.tag() << 56)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
