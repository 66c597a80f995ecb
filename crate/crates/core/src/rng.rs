//! Seed derivation. Every random stream in a run is a ChaCha8 generator keyed
//! by the scenario seed plus a purpose tag and indices, so streams never
//! depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for independent streams.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Topology = 1,
    Dataset = 2,
    Split = 3,
    Partition = 4,
    InitParams = 5,
    Training = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and two indices.
pub fn derive_seed(base: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(base);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream(base: u64, stream: Stream, a: u64, b: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, stream, a, b))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
