//! Reproducible randomness.
//!
//! Sequential draws for a path come from a ChaCha8 stream selected by the path
//! index, so results never depend on which worker ran the path. Bridge
//! refinement needs values addressed by position rather than by draw order;
//! those come from a keyed hash (`keyed_normal`) instead.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn hash(key: [u64; 4]) -> u64 {
    let mut h = splitmix(key[0]);
    for &k in &key[1..] {
        h = splitmix(h ^ k);
    }
    h
}

/// Uniform on `(0, 1)` (never exactly 0 or 1).
#[inline]
fn to_open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal determined entirely by `key`.
pub fn keyed_normal(key: [u64; 4]) -> f64 {
    let h1 = hash(key);
    let h2 = splitmix(h1 ^ 0xD1B5_4A32_D192_ED03);
    let u1 = to_open_unit(h1);
    let u2 = to_open_unit(h2);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
