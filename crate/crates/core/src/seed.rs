//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! whose seed is a pure function of a base seed and a list of tags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tags))
}

/// Stable integer key for an SNR value (milli-dB resolution).
pub fn snr_key(snr_db: f64) -> i64 {
    (snr_db * 1000.0).round() as i64
}

pub fn snr_tag(snr_db: f64) -> u64 {
    snr_key(snr_db) as u64
}
