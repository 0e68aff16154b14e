//! Small numeric and hashing helpers shared across modules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash of a byte string.
///
/// Hand-rolled so the value is a fixed, documented function of the input
/// bytes: per-item random streams derived from it must not change across
/// library versions, platforms, or std hasher randomization.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x00000100000001b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Deterministic per-item RNG: a ChaCha8 stream seeded with
/// `seed XOR fnv1a64(key)`.
///
/// Items keyed by stable strings (manifest-relative paths) get streams
/// that do not depend on processing order or worker count.
pub fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(key.as_bytes()))
}

/// Rounds half-up to the nearest integer: 0.5 goes to 1, -0.5 goes to 0.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Rounds half-up at one decimal place, for displayed percentages.
///
/// Reports keep full precision; only rendered strings go through this.
pub fn round1(x: f64) -> f64 {
    round_half_up(x * 10.0) / 10.0
}

/// Formats a value rounded half-up to one decimal place.
pub fn format1(x: f64) -> String {
    let r = round1(x);
    // round1 already snapped to a tenth; {:.1} just renders it.
    format!("{:.1}", r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::RngCore;

    #[test]
    fn fnv_matches_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn keyed_rng_depends_on_key_and_seed() {
        let mut a = keyed_rng(7, "images/a.png");
        let mut b = keyed_rng(7, "images/b.png");
        let mut a2 = keyed_rng(7, "images/a.png");
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_eq!(x, a2.next_u64());
        let mut c = keyed_rng(8, "images/a.png");
        assert_ne!(x, c.next_u64());
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(round_half_up(0.5), 1.0);
        assert_eq!(round_half_up(1.5), 2.0);
        assert_eq!(round_half_up(-0.5), 0.0);
        assert_eq!(round_half_up(2.4999), 2.0);
        assert_eq!(format1(51.748), "51.7");
        assert_eq!(format1(9.375), "9.4");
        assert_eq!(format1(-30.846), "-30.8");
        assert_eq!(format1(2.62), "2.6");
    }
}
