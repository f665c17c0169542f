//! Keyed ChaCha8 substreams.
//!
//! Every random draw in the crate comes from `substream(seed, domain, index)`:
//! the 256-bit ChaCha key is `seed || domain` (little-endian, zero padded) and
//! `index` selects the ChaCha stream. Copies, patches and phantoms therefore
//! never share state, and results do not depend on evaluation order or on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the random streams of independent pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Corruption = 0x636f_7272,
    Patch = 0x7061_7463,
    Damage = 0x6461_6d67,
    Phantom = 0x7068_616e,
    Weights = 0x7765_6967,
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derives a per-item seed (splitmix64 finalizer over `seed + index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
