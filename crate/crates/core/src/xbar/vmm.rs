//! Bit-serial vector-matrix multiply primitives.

use crate::error::{Error, Result};
use crate::xbar::tilemap::Tile;

/// Applies one binary input vector (as a row mask) to a tile: the partial
/// sum of column c is the count of conducting cells on driven rows,
/// popcount(input & column). The last entry is the dummy column's psum.
#[inline]
pub fn tile_vmm(input_mask: u128, tile: &Tile) -> Vec<u16> {
    tile.col_masks.iter().map(|&col| (input_mask & col).count_ones() as u16).collect()
}

/// Checked slice variant: one 0/1 entry per tile row.
pub fn tile_vmm_bits(input_bits: &[u8], tile: &Tile) -> Result<Vec<u16>> {
    if input_bits.len() != tile.rows {
        return Err(Error::Shape(format!(
            "{} input bits for a {}-row tile",
            input_bits.len(),
            tile.rows
        )));
    }
    let mut mask = 0u128;
    for (r, &b) in input_bits.iter().enumerate() {
        if b > 1 {
            return Err(Error::Invalid(format!("input bit {b} at row {r} is not binary")));
        }
        mask |= (b as u128) << r;
    }
    Ok(tile_vmm(mask, tile))
}

/// Shift-and-add over per-cycle values ordered most-significant bit first:
/// a Horner fold, so [3, 1] for a 2-bit activation evaluates to 3*2 + 1.
pub fn shift_add(values_msb_first: &[i64]) -> i64 {
    values_msb_first.iter().fold(0i64, |acc, &v| (acc << 1) + v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::KeyedRng;
    use crate::xbar::tilemap::TILE_DIM;
    use proptest::prelude::*;

    fn tile_from_dense(dense: &[u8], rows: usize, cols: usize) -> Tile {
        let mut col_masks = vec![0u128; cols + 1];
        for c in 0..cols {
            for r in 0..rows {
                if dense[r * cols + c] != 0 {
                    col_masks[c] |= 1 << r;
                }
            }
        }
        Tile { row_start: 0, rows, col_start: 0, cols, col_masks }
    }

    #[test]
    fn zero_input_gives_zero_psums() {
        let dense = vec![1u8; 16 * 4];
        let tile = tile_from_dense(&dense, 16, 4);
        assert!(tile_vmm(0, &tile).iter().all(|&p| p == 0));
    }

    #[test]
    fn hand_dot_product() {
        // input [1,0,1,1] . column [1,1,0,1] = 2
        let dense = vec![1u8, 1, 0, 1]; // 4 rows x 1 col
        let tile = tile_from_dense(&dense, 4, 1);
        let psums = tile_vmm_bits(&[1, 0, 1, 1], &tile).unwrap();
        assert_eq!(psums[0], 2);
        assert!(tile_vmm_bits(&[1, 0, 1], &tile).is_err());
        assert!(tile_vmm_bits(&[1, 0, 2, 1], &tile).is_err());
    }

    #[test]
    fn random_tile_matches_naive_double_loop() {
        let mut rng = KeyedRng::new(21, &[0]);
        for _ in 0..20 {
            let rows = 1 + rng.below(TILE_DIM as u64) as usize;
            let cols = 1 + rng.below(40) as usize;
            let dense: Vec<u8> =
                (0..rows * cols).map(|_| (rng.next_u64() & 1) as u8).collect();
            let bits: Vec<u8> = (0..rows).map(|_| (rng.next_u64() & 1) as u8).collect();
            let tile = tile_from_dense(&dense, rows, cols);
            let psums = tile_vmm_bits(&bits, &tile).unwrap();
            for c in 0..cols {
                let want: u16 =
                    (0..rows).map(|r| (bits[r] * dense[r * cols + c]) as u16).sum();
                assert_eq!(psums[c], want);
            }
        }
    }

    #[test]
    fn shift_add_examples() {
        assert_eq!(shift_add(&[3, 1]), 7);
        assert_eq!(shift_add(&[1, 0, 0]), 4);
        assert_eq!(shift_add(&[]), 0);
        assert_eq!(shift_add(&[-2, 3]), -1);
    }

    proptest! {
        /// Partial sums never exceed the number of driven rows.
        #[test]
        fn psum_bounded_by_driven_rows(seed in 0u64..5000) {
            let mut rng = KeyedRng::new(seed, &[7]);
            let rows = 1 + rng.below(TILE_DIM as u64) as usize;
            let cols = 1 + rng.below(30) as usize;
            let dense: Vec<u8> = (0..rows * cols).map(|_| (rng.next_u64() & 1) as u8).collect();
            let bits: Vec<u8> = (0..rows).map(|_| (rng.next_u64() & 1) as u8).collect();
            let driven: u16 = bits.iter().map(|&b| b as u16).sum();
            let tile = tile_from_dense(&dense, rows, cols);
            let psums = tile_vmm_bits(&bits, &tile).unwrap();
            for &p in &psums {
                prop_assert!(p <= driven);
                prop_assert!(p as usize <= rows);
            }
        }
    }
}
