//! Derivation of independent RNG streams from one top-level seed.
//!
//! Every stage of a run asks for its own stream by name:
//! `stream_seed(seed, "phase1/augment")`. The stage name is hashed with
//! 64-bit FNV-1a, xor-ed into the seed and passed through the splitmix64
//! finalizer, so the mapping is stable across platforms and releases
//! (unlike `std`'s `DefaultHasher`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, stage: &str) -> u64 {
    splitmix64(seed ^ fnv1a(stage.as_bytes()))
}

pub fn stream_rng(seed: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stage))
}

/// Stream of ensemble block `block` within a stage: `stage_seed ⊕ block`.
pub fn block_rng(stage_seed: u64, block: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed ^ block as u64)
}
