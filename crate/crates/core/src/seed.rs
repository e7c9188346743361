//! Seed fan-out. Every random stream in an experiment is derived from one
//! master seed, either by hashing a label or by mixing in a counter.

use sha2::{Digest, Sha256};

/// Environment variable that overrides the master seed.
pub const SEED_ENV: &str = "RGBDFUSE_SEED";

/// First eight bytes (LE) of `sha256(master_le || label)`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cheap per-item seed, e.g. for the n-th training draw.
pub fn mix_seed(seed: u64, n: u64) -> u64 {
    splitmix64(seed ^ splitmix64(n))
}

/// The master seed from [`SEED_ENV`] if set, otherwise `default`.
pub fn master_seed(default: u64) -> Result<u64, String> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        Err(_) => Ok(default),
    }
}
