//! The Not-so-Clevr dataset: every 9×9 square that fits on a 64×64 canvas,
//! with its center coordinates, one-hot center map and painted image.
//!
//! Coordinates follow `x = column`, `y = row` throughout.

mod io;
mod split;

pub use io::{dataset_hash, read_dataset, read_split, write_dataset, write_pgm, write_split};
pub use split::{
    in_held_out_quadrant, make_split, normalize_min_max, split_sum_images, Split, SplitKind, SplitSums, QUADRANT_BOUNDARY,
    UNIFORM_TRAIN,
};

use crate::real::Real;
use crate::tensor::Tensor;

pub const CANVAS: usize = 64;
pub const SQUARE: usize = 9;
pub const HALF_SQUARE: usize = SQUARE / 2;
pub const CENTER_MIN: usize = HALF_SQUARE;
pub const CENTER_MAX: usize = CANVAS - 1 - HALF_SQUARE;
/// Side of the grid of admissible centers (56).
pub const CENTER_GRID: usize = CENTER_MAX - CENTER_MIN + 1;
pub const EXAMPLE_COUNT: usize = CENTER_GRID * CENTER_GRID;
pub const PIXELS: usize = CANVAS * CANVAS;

/// 64×64 binary map stored as one `u64` per row; bit `j` of row `i` is
/// pixel `(row i, column j)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    rows: [u64; CANVAS],
}

impl Default for BinaryMap {
    fn default() -> Self {
        BinaryMap { rows: [0; CANVAS] }
    }
}

impl std::fmt::Debug for BinaryMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMap({} set)", self.count())
    }
}

impl BinaryMap {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.rows[row] >> col & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        if on {
            self.rows[row] |= 1 << col;
        } else {
            self.rows[row] &= !(1 << col);
        }
    }

    pub fn row_bits(&self, row: usize) -> u64 {
        self.rows[row]
    }

    pub fn count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum()
    }

    /// Row-major 0/1 values.
    pub fn to_values<T: Real>(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(PIXELS);
        for row in 0..CANVAS {
            for col in 0..CANVAS {
                out.push(if self.get(row, col) { T::one() } else { T::zero() });
            }
        }
        out
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(&[CANVAS, CANVAS, 1], self.to_values()).unwrap()
    }

    /// Bit-packed row-major, most significant bit first (512 bytes).
    pub fn to_packed(&self) -> [u8; PIXELS / 8] {
        let mut out = [0u8; PIXELS / 8];
        for row in 0..CANVAS {
            for col in 0..CANVAS {
                if self.get(row, col) {
                    let p = row * CANVAS + col;
                    out[p / 8] |= 0x80 >> (p % 8);
                }
            }
        }
        out
    }

    pub fn from_packed(bytes: &[u8]) -> BinaryMap {
        let mut map = BinaryMap::default();
        for p in 0..PIXELS {
            if bytes[p / 8] & (0x80 >> (p % 8)) != 0 {
                map.set(p / CANVAS, p % CANVAS, true);
            }
        }
        map
    }
}

/// One square: center, one-hot center map, painted image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub x: u8,
    pub y: u8,
    pub onehot: BinaryMap,
    pub image: BinaryMap,
}

impl Example {
    /// Builds the example centered at column `x`, row `y`. Both must lie in
    /// `[CENTER_MIN, CENTER_MAX]`.
    pub fn new(x: usize, y: usize) -> Example {
        assert!((CENTER_MIN..=CENTER_MAX).contains(&x) && (CENTER_MIN..=CENTER_MAX).contains(&y));
        let mut onehot = BinaryMap::default();
        onehot.set(y, x, true);
        let mut image = BinaryMap::default();
        let band = ((1u64 << SQUARE) - 1) << (x - HALF_SQUARE);
        for row in y - HALF_SQUARE..=y + HALF_SQUARE {
            image.rows[row] = band;
        }
        Example {
            x: x as u8,
            y: y as u8,
            onehot,
            image,
        }
    }

    /// Class index of the center pixel, `y · 64 + x`.
    pub fn class_index(&self) -> usize {
        self.y as usize * CANVAS + self.x as usize
    }

    /// Center scaled to `[-1, 1]` as `(x, y)` via `t = 2p/63 − 1`.
    pub fn normalized_center(&self) -> [f64; 2] {
        [normalize_coord(self.x as f64), normalize_coord(self.y as f64)]
    }
}

pub fn normalize_coord(p: f64) -> f64 {
    2.0 * p / (CANVAS - 1) as f64 - 1.0
}

pub fn denormalize_coord(t: f64) -> f64 {
    (t + 1.0) * (CANVAS - 1) as f64 / 2.0
}

/// All 3136 examples, row-major by `(y, x)`.
pub fn generate_dataset() -> Vec<Example> {
    let mut out = Vec::with_capacity(EXAMPLE_COUNT);
    for y in CENTER_MIN..=CENTER_MAX {
        for x in CENTER_MIN..=CENTER_MAX {
            out.push(Example::new(x, y));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_square_extent() {
        let ex = Example::new(4, 4);
        for row in 0..CANVAS {
            for col in 0..CANVAS {
                assert_eq!(ex.image.get(row, col), row <= 8 && col <= 8);
            }
        }
        assert_eq!(ex.image.count(), 81);
    }

    #[test]
    fn ordering_and_count() {
        let ds = generate_dataset();
        assert_eq!(ds.len(), 3136);
        assert_eq!((ds[0].x, ds[0].y), (4, 4));
        assert_eq!((ds[1].x, ds[1].y), (5, 4));
        assert_eq!((ds[56].x, ds[56].y), (4, 5));
        assert_eq!((ds[3135].x, ds[3135].y), (59, 59));
        for ex in &ds {
            assert_eq!(ex.onehot.count(), 1);
            assert!(ex.onehot.get(ex.y as usize, ex.x as usize));
            assert_eq!(ex.image.count(), 81);
        }
    }

    #[test]
    fn packing_roundtrip_and_bit_order() {
        let ex = Example::new(9, 4);
        let packed = ex.onehot.to_packed();
        // pixel (4, 9) -> p = 265 -> byte 33, second bit from the top
        assert_eq!(packed[33], 0x40);
        assert_eq!(packed.iter().filter(|&&b| b != 0).count(), 1);
        assert_eq!(BinaryMap::from_packed(&packed), ex.onehot);
        assert_eq!(BinaryMap::from_packed(&ex.image.to_packed()), ex.image);
    }

    #[test]
    fn coordinate_normalization() {
        assert_eq!(normalize_coord(0.0), -1.0);
        assert_eq!(normalize_coord(63.0), 1.0);
        assert!((denormalize_coord(normalize_coord(17.0)) - 17.0).abs() < 1e-12);
    }
}
