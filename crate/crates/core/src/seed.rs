//! Seed fan-out so that one configured seed drives every random stream.

/// Derives an independent 64-bit seed for stream `index` from `root`.
///
/// Uses the SplitMix64 finalizer over `root + index·φ64`.
pub fn fan_out(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_streams() {
        let a = fan_out(7, 0);
        let b = fan_out(7, 1);
        let c = fan_out(8, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, fan_out(7, 0));
    }
}
