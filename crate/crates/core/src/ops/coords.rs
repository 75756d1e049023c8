//! Coordinate channels (AddCoords) and the CoordConv layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::conv::{self, ConvSpec};
use crate::real::Real;
use crate::tensor::Tensor;

/// Which coordinate channels to append.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordSpec {
    /// Append a radius channel after `i` and `j`.
    pub with_r: bool,
    /// Divide the radius by the corner radius so it lies in `[0, 1]`.
    pub r_normalized: bool,
}

impl Default for CoordSpec {
    fn default() -> Self {
        CoordSpec {
            with_r: false,
            r_normalized: true,
        }
    }
}

impl CoordSpec {
    pub fn with_r(r_normalized: bool) -> Self {
        CoordSpec {
            with_r: true,
            r_normalized,
        }
    }

    /// Number of coordinate channels.
    pub fn d(&self) -> usize {
        if self.with_r {
            3
        } else {
            2
        }
    }
}

// Linear map of index 0..len-1 onto [-1, 1]; a single row/column sits at 0.
fn scaled(index: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        2.0 * index as f64 / (len - 1) as f64 - 1.0
    }
}

/// Coordinate values for an `h×w` grid, laid out `[h, w, d]`:
/// `i′` (row), `j′` (column), then optionally `r`.
pub fn coordinate_map<T: Real>(h: usize, w: usize, spec: CoordSpec) -> Vec<T> {
    let d = spec.d();
    let (ch, cw) = (h as f64 / 2.0, w as f64 / 2.0);
    let r_scale = if spec.r_normalized {
        (ch * ch + cw * cw).sqrt()
    } else {
        1.0
    };
    let mut out = Vec::with_capacity(h * w * d);
    for i in 0..h {
        for j in 0..w {
            out.push(T::from_f64(scaled(i, h)));
            out.push(T::from_f64(scaled(j, w)));
            if spec.with_r {
                let (di, dj) = (i as f64 - ch, j as f64 - cw);
                out.push(T::from_f64((di * di + dj * dj).sqrt() / r_scale));
            }
        }
    }
    out
}

/// Concatenates coordinate channels after the input channels:
/// `[n,h,w,c] -> [n,h,w,c+d]`.
pub fn add_coords<T: Real>(x: &Tensor<T>, spec: CoordSpec) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::shape("add_coords: empty spatial extent"));
    }
    let d = spec.d();
    let coords = coordinate_map::<T>(h, w, spec);
    let mut out = Vec::with_capacity(n * h * w * (c + d));
    let data = x.data();
    for b in 0..n {
        for p in 0..h * w {
            let base = (b * h * w + p) * c;
            out.extend_from_slice(&data[base..base + c]);
            out.extend_from_slice(&coords[p * d..p * d + d]);
        }
    }
    Tensor::from_vec(&[n, h, w, c + d], out)
}

fn strip_coords<T: Real>(grad: &Tensor<T>, c: usize, d: usize) -> Tensor<T> {
    let shape = grad.shape();
    let mut out = Vec::with_capacity(grad.len() / (c + d) * c);
    for px in grad.data().chunks_exact(c + d) {
        out.extend_from_slice(&px[..c]);
    }
    Tensor::from_vec(&[shape[0], shape[1], shape[2], c], out).unwrap()
}

/// Forward-only CoordConv that never materialises the concatenated input:
/// the data channels go through a convolution with the data slice of the
/// weights, the coordinate channels (identical for every batch element) are
/// convolved once with the coordinate slice, and the two are added.
pub fn coord_conv_fused<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
    coords: CoordSpec,
) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.dims4()?;
    let d = coords.d();
    if spec.c_in != c + d {
        return Err(Error::shape(format!(
            "coord_conv: spec expects {} input channels, data has {c} + {d} coordinates",
            spec.c_in
        )));
    }
    conv::check_weights(weights, spec)?;
    let (k, co) = (spec.k, spec.c_out);
    let mut w_data = Vec::with_capacity(k * k * c * co);
    let mut w_coord = Vec::with_capacity(k * k * d * co);
    for tap in weights.data().chunks_exact((c + d) * co) {
        w_data.extend_from_slice(&tap[..c * co]);
        w_coord.extend_from_slice(&tap[c * co..]);
    }
    let data_spec = ConvSpec { c_in: c, bias: false, ..*spec };
    let coord_spec = ConvSpec { c_in: d, bias: spec.bias, ..*spec };
    let w_data = Tensor::from_vec(&[k, k, c, co], w_data)?;
    let w_coord = Tensor::from_vec(&[k, k, d, co], w_coord)?;

    let coord_map = Tensor::from_vec(&[1, h, w, d], coordinate_map::<T>(h, w, coords))?;
    let coord_out = conv::conv2d(&coord_map, &w_coord, bias, &coord_spec)?;
    let mut out = conv::conv2d(x, &w_data, None, &data_spec)?;
    let per_item = coord_out.len();
    for item in out.data_mut().chunks_exact_mut(per_item).take(n) {
        for (o, &v) in item.iter_mut().zip(coord_out.data()) {
            *o += v;
        }
    }
    Ok(out)
}

impl<T: Real> Graph<T> {
    pub fn add_coords(&mut self, x: Var, spec: CoordSpec) -> Result<Var> {
        let out = add_coords(self.value(x), spec)?;
        let c = self.value(x).dims4()?.3;
        let d = spec.d();
        self.record("add_coords", &[x], out, move |ctx| {
            vec![Some(strip_coords(ctx.grad, c, d))]
        })
    }

    /// `conv2d(add_coords(x))` with weights `[k, k, c+d, c′]`.
    pub fn coord_conv(
        &mut self,
        x: Var,
        weights: Var,
        bias: Option<Var>,
        spec: &ConvSpec,
        coords: CoordSpec,
    ) -> Result<Var> {
        let augmented = self.add_coords(x, coords)?;
        self.conv2d(augmented, weights, bias, spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::Padding;
    use crate::rng::Rng;
    use crate::tensor::Fill;

    #[test]
    fn three_by_three_grid() {
        let x = Tensor::<f64>::zeros(&[1, 3, 3, 1]);
        let y = add_coords(&x, CoordSpec::default()).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 3]);
        let chan = |ch: usize| -> Vec<f64> { y.data().chunks(3).map(|p| p[ch]).collect() };
        assert_eq!(chan(0), vec![0.0; 9]);
        assert_eq!(chan(1), vec![-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(chan(2), vec![-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
    }

    #[test]
    fn canvas_scaling_values() {
        let m = coordinate_map::<f64>(64, 64, CoordSpec::with_r(false));
        let at = |i: usize, j: usize, ch: usize| m[(i * 64 + j) * 3 + ch];
        assert_eq!(at(0, 5, 0), -1.0);
        assert_eq!(at(63, 5, 0), 1.0);
        assert!((at(32, 0, 0) - 0.015873015873).abs() < 1e-9);
        assert!((at(0, 0, 2) - 45.254833995939).abs() < 1e-9);
        let normalized = coordinate_map::<f64>(64, 64, CoordSpec::with_r(true));
        assert!((normalized[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_extent_is_midpoint() {
        let m = coordinate_map::<f64>(1, 4, CoordSpec::default());
        assert!(m.chunks(2).all(|p| p[0] == 0.0));
        assert_eq!(m[1], -1.0);
    }

    #[test]
    fn input_channels_preserved_and_coords_independent() {
        let mut rng = Rng::new(1);
        let x = Tensor::<f32>::new(&[2, 4, 5, 3], Fill::Uniform { lo: -5.0, hi: 5.0 }, &mut rng).unwrap();
        let z = Tensor::<f32>::zeros(&[2, 4, 5, 3]);
        let spec = CoordSpec::with_r(true);
        let (yx, yz) = (add_coords(&x, spec).unwrap(), add_coords(&z, spec).unwrap());
        for ((px, pz), pin) in yx.data().chunks(6).zip(yz.data().chunks(6)).zip(x.data().chunks(3)) {
            assert_eq!(&px[..3], pin);
            assert_eq!(&px[3..], &pz[3..]);
        }
    }

    #[test]
    fn fused_path_matches_concat_path() {
        let mut rng = Rng::new(11);
        for &(k, stride, padding) in &[(1, 1, Padding::Same), (3, 1, Padding::Same), (2, 2, Padding::Same), (3, 2, Padding::Valid)] {
            for coords in [CoordSpec::default(), CoordSpec::with_r(true)] {
                let (c, co) = (3, 4);
                let spec = ConvSpec { k, stride, padding, c_in: c + coords.d(), c_out: co, bias: true };
                let x = Tensor::<f64>::new(&[2, 7, 6, c], Fill::Uniform { lo: -1.0, hi: 1.0 }, &mut rng).unwrap();
                let w = Tensor::<f64>::new(&[k, k, c + coords.d(), co], Fill::Normal { mean: 0.0, std: 0.5 }, &mut rng).unwrap();
                let b = Tensor::<f64>::new(&[co], Fill::Normal { mean: 0.0, std: 0.5 }, &mut rng).unwrap();
                let concat = conv::conv2d(&add_coords(&x, coords).unwrap(), &w, Some(&b), &spec).unwrap();
                let fused = coord_conv_fused(&x, &w, Some(&b), &spec, coords).unwrap();
                assert!(concat.max_abs_diff(&fused) < 1e-6, "k={k} stride={stride}");
            }
        }
    }
}
