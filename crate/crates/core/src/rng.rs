//! Seeded random streams.
//!
//! Every command derives its generators from one root seed. Each consumer asks
//! for a named stream so adding a consumer never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams of the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Triplets,
    Init,
    Noise,
    Search,
    Toy,
    Bases,
    Split,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Triplets => 1,
            Stream::Init => 2,
            Stream::Noise => 3,
            Stream::Search => 4,
            Stream::Toy => 5,
            Stream::Bases => 6,
            Stream::Split => 7,
        }
    }
}

/// Generator for `stream` of `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Generator for the `index`-th independent unit (trial, fold, noise cell)
/// within `stream`.
pub fn substream(seed: u64, stream: Stream, index: u64) -> Rng {
    let mixed = splitmix64(seed ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(stream.id());
    rng
}

/// Derive a child seed, e.g. one per trial.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
