//! Counter-style seeding: every random stream is a pure function of
//! `(seed, stream, index)`, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-seed for component `component` of a master seed.
pub fn derive_seed(master: u64, component: u64) -> u64 {
    splitmix64(master ^ splitmix64(component.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Generator keyed by `(seed, stream, index)`.
pub fn keyed_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let words = [
        splitmix64(seed),
        splitmix64(stream ^ 0xA076_1D64_78BD_642F),
        splitmix64(index ^ 0xE703_7ED1_A0B4_28DB),
        splitmix64(seed ^ stream.rotate_left(21) ^ index.rotate_left(42)),
    ];
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
