use crate::dataset::{generate_dataset, Example, CANVAS, EXAMPLE_COUNT, PIXELS};
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};

/// First center coordinate of the held-out quadrant (x ≥ 32 and y ≥ 32).
pub const QUADRANT_BOUNDARY: u8 = 32;
/// `round(0.8 · 3136)`.
pub const UNIFORM_TRAIN: usize = 2509;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Uniform,
    Quadrant,
}

impl SplitKind {
    pub fn code(self) -> u8 {
        match self {
            SplitKind::Uniform => 0,
            SplitKind::Quadrant => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SplitKind::Uniform),
            1 => Some(SplitKind::Quadrant),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Uniform => "uniform",
            SplitKind::Quadrant => "quadrant",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(SplitKind::Uniform),
            "quadrant" => Ok(SplitKind::Quadrant),
            other => Err(Error::invalid(format!("unknown split `{other}` (expected uniform|quadrant)"))),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Disjoint train/test index lists (ascending) covering the whole dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub kind: SplitKind,
    pub seed: u32,
    pub train: Vec<u16>,
    pub test: Vec<u16>,
}

pub fn in_held_out_quadrant(ex: &Example) -> bool {
    ex.x >= QUADRANT_BOUNDARY && ex.y >= QUADRANT_BOUNDARY
}

/// Uniform: seeded shuffle, first 2509 train and the remaining 627 test.
/// Quadrant: test is every center with `x ≥ 32` and `y ≥ 32` (the seed is
/// recorded but unused).
pub fn make_split(kind: SplitKind, seed: u32) -> Split {
    let (mut train, mut test): (Vec<u16>, Vec<u16>) = match kind {
        SplitKind::Uniform => {
            let mut idx: Vec<u16> = (0..EXAMPLE_COUNT as u16).collect();
            Rng::with_stream(seed as u64, Stream::Split, 0).shuffle(&mut idx);
            let test = idx.split_off(UNIFORM_TRAIN);
            (idx, test)
        }
        SplitKind::Quadrant => generate_dataset()
            .iter()
            .enumerate()
            .map(|(i, ex)| (i as u16, in_held_out_quadrant(ex)))
            .fold((Vec::new(), Vec::new()), |(mut tr, mut te), (i, held)| {
                if held {
                    te.push(i);
                } else {
                    tr.push(i);
                }
                (tr, te)
            }),
    };
    train.sort_unstable();
    test.sort_unstable();
    Split { kind, seed, train, test }
}

/// Pixelwise sums over each half of a split, min-max normalized to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct SplitSums {
    pub train_onehot: Vec<f64>,
    pub train_image: Vec<f64>,
    pub test_onehot: Vec<f64>,
    pub test_image: Vec<f64>,
}

pub fn normalize_min_max(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    for v in values.iter_mut() {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
    }
}

fn accumulate(dataset: &[Example], indices: &[u16], image: bool) -> Vec<f64> {
    let mut sum = vec![0.0; PIXELS];
    for &i in indices {
        let ex = &dataset[i as usize];
        let map = if image { &ex.image } else { &ex.onehot };
        for row in 0..CANVAS {
            let bits = map.row_bits(row);
            if bits == 0 {
                continue;
            }
            for col in 0..CANVAS {
                if bits >> col & 1 == 1 {
                    sum[row * CANVAS + col] += 1.0;
                }
            }
        }
    }
    normalize_min_max(&mut sum);
    sum
}

pub fn split_sum_images(dataset: &[Example], split: &Split) -> SplitSums {
    SplitSums {
        train_onehot: accumulate(dataset, &split.train, false),
        train_image: accumulate(dataset, &split.train, true),
        test_onehot: accumulate(dataset, &split.test, false),
        test_image: accumulate(dataset, &split.test, true),
    }
}
