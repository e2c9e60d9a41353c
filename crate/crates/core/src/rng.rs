//! Seed-derived random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for `stream` under a run seed. Streams with the same
/// seed never overlap, so episodes can be generated in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for one pipeline stage, so stages sharing a run seed draw from
/// unrelated generators.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, folded into the run seed with a SplitMix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = stream_rng(1, 0).random();
        let b: u64 = stream_rng(1, 1).random();
        let c: u64 = stream_rng(1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        assert_ne!(derive_seed(7, "demos"), derive_seed(7, "eval"));
        assert_ne!(derive_seed(7, "demos"), derive_seed(8, "demos"));
        assert_eq!(derive_seed(7, "demos"), derive_seed(7, "demos"));
    }
}
