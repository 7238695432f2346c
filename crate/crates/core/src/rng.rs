use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates child seeds from a base seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, tag: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, tag))
}

/// Stream tags, so the same seed never feeds two consumers.
pub mod tags {
    pub const SCENARIO: u64 = 1;
    pub const CHANNEL: u64 = 2;
    pub const AGENT: u64 = 3;
    pub const SCHEME: u64 = 4;
    pub const NETWORK: u64 = 5;
    pub const EVAL: u64 = 6;
}
