//! Per-job seed derivation.

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable hash of `(config seed, grid point index, generation)`.
///
/// Each component is folded through a 64-bit finalizer so that nearby inputs
/// produce unrelated streams.
pub fn derive_seed(seed: u64, grid_index: u64, generation: u32) -> u64 {
    let mut h = mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    h = mix(h ^ grid_index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    mix(h ^ u64::from(generation).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Initialization seed for grid seed index `seed_index`. Generation 0 is
/// never a record generation, so these never collide with record seeds.
pub fn init_seed(seed: u64, seed_index: usize) -> u64 {
    derive_seed(seed, seed_index as u64, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn no_collisions_on_a_dense_grid() {
        let mut seen = HashSet::new();
        for s in 0..8 {
            for i in 0..256 {
                for g in 1..=4 {
                    assert!(seen.insert(derive_seed(s, i, g)));
                }
            }
        }
    }

    #[test]
    fn stable_across_calls() {
        assert_eq!(derive_seed(7, 3, 2), derive_seed(7, 3, 2));
        assert_ne!(derive_seed(7, 3, 2), derive_seed(7, 2, 3));
    }
}
