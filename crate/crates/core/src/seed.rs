//! Seed derivation and stable hashing.
//!
//! Hashes here must stay fixed across builds and platforms: they pick
//! embedding buckets stored in checkpoints and derive per-prompt random
//! substreams, so `std`'s hasher (unspecified algorithm) is not usable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// splitmix64 finalizer; decorrelates nearby integers.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for substream `index` of `master`.
pub fn derive(master: u64, index: u64) -> u64 {
    mix(master ^ mix(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Child seed keyed by text, e.g. one generator call per instruction.
pub fn derive_text(master: u64, text: &str) -> u64 {
    derive(master, fnv1a(text.as_bytes()))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
