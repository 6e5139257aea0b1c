//! Seeded, splittable random streams.
//!
//! Every stochastic routine takes a `u64` seed and derives independent
//! substreams via ChaCha stream ids. Chunked drivers assign one substream per
//! fixed-size chunk of work, so output is bit-identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Rows simulated per substream chunk. Fixed so parallel and sequential
/// execution produce identical output.
pub const SIM_CHUNK: usize = 8192;

/// Deterministic substream `id` of the generator keyed by `seed`.
pub fn substream(seed: u64, id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Derive an unrelated seed from a base seed and a tag (splitmix64 mix).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: Vec<u64> = substream(1, 0).random_iter().take(4).collect();
        let b: Vec<u64> = substream(1, 0).random_iter().take(4).collect();
        let c: Vec<u64> = substream(1, 1).random_iter().take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
