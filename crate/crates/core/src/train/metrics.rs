//! Evaluation metrics. All are means over examples, so they do not depend on
//! example order.

use crate::dataset::CANVAS;
use crate::ops::dense::sigmoid;
use crate::real::Real;

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Number of rows of `logits` (`[n, k]`, row-major) whose argmax equals the
/// target class.
pub fn correct_count<T: Real>(logits: &[T], classes: usize, targets: &[usize]) -> usize {
    logits
        .chunks_exact(classes)
        .zip(targets)
        .filter(|(row, &t)| argmax(row) == t)
        .count()
}

pub fn accuracy<T: Real>(logits: &[T], classes: usize, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    correct_count(logits, classes, targets) as f64 / targets.len() as f64
}

/// `|P ∧ T| / |P ∨ T|` with `P = prob > threshold` and `T = target > 0.5`.
/// Two empty sets give 1.
pub fn iou<T: Real>(prob: &[T], target: &[T], threshold: f64) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in prob.iter().zip(target) {
        let p = p.as_f64() > threshold;
        let t = t.as_f64() > 0.5;
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Summed per-example IOU for a batch of logit maps thresholded at
/// probability 0.5.
pub fn iou_sum_from_logits<T: Real>(logits: &[T], targets: &[T], pixels: usize) -> f64 {
    logits
        .chunks_exact(pixels)
        .zip(targets.chunks_exact(pixels))
        .map(|(l, t)| {
            let prob: Vec<T> = l.iter().map(|&z| sigmoid(z)).collect();
            iou(&prob, t, 0.5)
        })
        .sum()
}

/// Pixels per unit of normalized coordinate.
pub const PIXEL_SCALE: f64 = (CANVAS - 1) as f64 / 2.0;

/// Summed Euclidean distance in pixels between normalized `[n, 2]` rows.
pub fn pixel_error_sum<T: Real>(pred: &[T], target: &[T]) -> f64 {
    pred.chunks_exact(2)
        .zip(target.chunks_exact(2))
        .map(|(p, t)| {
            let dx = p[0].as_f64() - t[0].as_f64();
            let dy = p[1].as_f64() - t[1].as_f64();
            (dx * dx + dy * dy).sqrt() * PIXEL_SCALE
        })
        .sum()
}

/// Mean Euclidean distance in pixels.
pub fn pixel_error<T: Real>(pred: &[T], target: &[T]) -> f64 {
    let n = pred.len() / 2;
    if n == 0 {
        return 0.0;
    }
    pixel_error_sum(pred, target) / n as f64
}
