//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a `ChaCha8` stream whose
//! seed is derived from the master seed, a purpose tag, and integer
//! qualifiers (client id, round index, ...). The derivation is a fixed
//! 64-bit mixing chain so that results are reproducible across runs,
//! platforms, and re-implementations in other languages:
//!
//! ```text
//! mix64(z):   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!             z ^= z >> 27; z *= 0x94D049BB133111EB;
//!             z ^= z >> 31                      (splitmix64 finalizer)
//! combine(a, b) = mix64((a + 0x9E3779B97F4A7C15) ^ b)
//! derive(master, tag, parts) = fold combine over
//!             [fnv1a64(tag), parts...] starting from master
//! ```
//!
//! All arithmetic is wrapping; `fnv1a64` is the 64-bit FNV-1a hash of the
//! tag's UTF-8 bytes (offset basis 0xCBF29CE484222325, prime 0x100000001B3).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn combine(a: u64, b: u64) -> u64 {
    mix64(a.wrapping_add(GOLDEN) ^ b)
}

fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Derive a stream seed from the master seed, a purpose tag, and qualifiers.
pub fn derive(master: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = combine(master, fnv1a64(tag));
    for &p in parts {
        h = combine(h, p);
    }
    h
}

/// Deterministic RNG stream for a derived seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for the initial model parameters.
pub fn init_seed(master: u64) -> u64 {
    derive(master, "init", &[])
}

/// Seed for the dataset partition.
pub fn partition_seed(master: u64) -> u64 {
    derive(master, "part", &[])
}

/// Seed for trigger poisoning of the target client.
pub fn poison_seed(master: u64) -> u64 {
    derive(master, "poison", &[])
}

/// Seed for client selection in one round.
pub fn select_seed(master: u64, round: usize) -> u64 {
    derive(master, "select", &[round as u64])
}

/// Seed for one client's local training in one round.
pub fn client_seed(master: u64, client: usize, round: usize) -> u64 {
    derive(master, "client", &[client as u64, round as u64])
}

/// Seed for the target client's ascent pass.
pub fn ascent_seed(master: u64) -> u64 {
    derive(master, "ascent", &[])
}

/// Seed for one client's representation sampling and scaling factors.
pub fn representation_seed(master: u64, client: usize) -> u64 {
    derive(master, "repr", &[client as u64])
}

/// Seed for the fresh model used by the retraining baseline.
pub fn retrain_seed(master: u64) -> u64 {
    derive(master, "retrain", &[])
}

/// Master seed for post-unlearning recovery rounds.
pub fn recover_seed(master: u64) -> u64 {
    derive(master, "recover", &[])
}
