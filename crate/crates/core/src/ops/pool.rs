//! Max and global-average pooling.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Non-overlapping 2×2 max pooling. Returns the pooled tensor and, per
/// output element, the flat input index that won (first maximum in
/// row-major window order).
pub fn max_pool2<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, h, w, c) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("max_pool2 needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = data[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    arg.push(best_idx as u32);
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, oh, ow, c], out)?, arg))
}

/// Mean over all spatial positions: `[n,h,w,c] -> [n,c]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.dims4()?;
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut out = vec![T::zero(); n * c];
    for (b, item) in x.data().chunks_exact(h * w * c).enumerate() {
        let acc = &mut out[b * c..(b + 1) * c];
        for px in item.chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a *= inv;
        }
    }
    Tensor::from_vec(&[n, c], out)
}

impl<T: Real> Graph<T> {
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, arg) = max_pool2(self.value(x))?;
        self.record("max_pool2", &[x], out, move |ctx| {
            let mut dx = Tensor::zeros(ctx.inputs[0].shape());
            let d = dx.data_mut();
            for (&i, &g) in arg.iter().zip(ctx.grad.data()) {
                d[i as usize] += g;
            }
            vec![Some(dx)]
        })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = global_avg_pool(self.value(x))?;
        self.record("global_avg_pool", &[x], out, |ctx| {
            let (_, h, w, c) = ctx.inputs[0].dims4().unwrap();
            let inv = T::one() / T::from_f64((h * w) as f64);
            let mut dx = Vec::with_capacity(ctx.inputs[0].len());
            for g in ctx.grad.data().chunks_exact(c) {
                for _ in 0..h * w {
                    dx.extend(g.iter().map(|&v| v * inv));
                }
            }
            vec![Some(Tensor::from_vec(ctx.inputs[0].shape(), dx).unwrap())]
        })
    }
}
