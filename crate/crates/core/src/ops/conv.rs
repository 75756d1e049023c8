//! 2-D convolution and transposed convolution (im2col + GEMM).
//!
//! Weights for `conv2d` are `[k, k, c_in, c_out]` and are used as
//! cross-correlation (no kernel flip). `conv2d_transpose` takes weights
//! `[k, k, c_out, c_in]` and is the exact adjoint of the strided `conv2d`
//! sharing the same weights and padding rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::linalg::{gemm, Trans};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output extent `⌈h / stride⌉`; the `k - 1`-ish total padding is split
    /// with the smaller half before and the larger half after.
    Same,
    /// No padding; output extent `(h - k) / stride + 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub k: usize,
    pub stride: usize,
    pub padding: Padding,
    pub c_in: usize,
    pub c_out: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1, same padding, with bias.
    pub fn new(k: usize, c_in: usize, c_out: usize) -> Self {
        ConvSpec {
            k,
            stride: 1,
            padding: Padding::Same,
            c_in,
            c_out,
            bias: true,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    /// `c · c′ · k²`.
    pub fn weight_count(&self) -> usize {
        self.c_in * self.c_out * self.k * self.k
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.bias { self.c_out } else { 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.stride == 0 || self.c_in == 0 || self.c_out == 0 {
            return Err(Error::invalid(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    /// Spatial output size of `conv2d` on an `h×w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok(Geometry::forward(1, h, w, self)?.out_hw())
    }

    /// Spatial output size of `conv2d_transpose` on an `h×w` input.
    pub fn transpose_output_size(&self, h: usize, w: usize) -> (usize, usize) {
        match self.padding {
            Padding::Same => (h * self.stride, w * self.stride),
            Padding::Valid => ((h - 1) * self.stride + self.k, (w - 1) * self.stride + self.k),
        }
    }
}

/// Sliding-window layout of a forward convolution.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    k: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

fn same_padding(len: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(len);
    (out, total / 2)
}

impl Geometry {
    fn forward(n: usize, h: usize, w: usize, spec: &ConvSpec) -> Result<Geometry> {
        spec.validate()?;
        let (k, s) = (spec.k, spec.stride);
        let (oh, ow, pad_top, pad_left) = match spec.padding {
            Padding::Same => {
                let (oh, pt) = same_padding(h, k, s);
                let (ow, pl) = same_padding(w, k, s);
                (oh, ow, pt, pl)
            }
            Padding::Valid => {
                if h < k || w < k {
                    return Err(Error::shape(format!(
                        "valid conv with k={k} on {h}x{w} input"
                    )));
                }
                ((h - k) / s + 1, (w - k) / s + 1, 0, 0)
            }
        };
        Ok(Geometry {
            n,
            h,
            w,
            c: spec.c_in,
            oh,
            ow,
            k,
            stride: s,
            pad_top,
            pad_left,
        })
    }

    fn out_hw(&self) -> (usize, usize) {
        (self.oh, self.ow)
    }

    fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.k * self.k * self.c
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Input row/column for output index `o` and tap `t`, if inside the image.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + t).checked_sub(pad)?;
        (pos < len).then_some(pos)
    }
}

/// `[n,h,w,c] -> [n·oh·ow, k·k·c]`, columns ordered `(ky, kx, c)`.
fn im2col<T: Real>(x: &[T], g: &Geometry) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    let mut row = 0;
    for b in 0..g.n {
        let img = &x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.k {
                    let Some(iy) = Geometry::src(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ix) = Geometry::src(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let s = (iy * g.w + ix) * g.c;
                        let d = (ky * g.k + kx) * g.c;
                        dst[d..d + g.c].copy_from_slice(&img[s..s + g.c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patches back into `[n,h,w,c]`.
fn col2im<T: Real>(cols: &[T], g: &Geometry) -> Vec<T> {
    let patch = g.patch();
    let mut x = vec![T::zero(); g.n * g.h * g.w * g.c];
    let mut row = 0;
    for b in 0..g.n {
        let img = &mut x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.k {
                    let Some(iy) = Geometry::src(oy, ky, g.stride, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ix) = Geometry::src(ox, kx, g.stride, g.pad_left, g.w) else {
                            continue;
                        };
                        let d = (iy * g.w + ix) * g.c;
                        let s = (ky * g.k + kx) * g.c;
                        for (acc, &v) in img[d..d + g.c].iter_mut().zip(&src[s..s + g.c]) {
                            *acc += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

pub(crate) fn check_weights<T: Real>(weights: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    let want = [spec.k, spec.k, spec.c_in, spec.c_out];
    if weights.shape() != want {
        return Err(Error::shape(format!(
            "conv weights {:?}, expected {want:?}",
            weights.shape()
        )));
    }
    Ok(())
}

fn check_bias<T: Real>(bias: Option<&Tensor<T>>, channels: usize, spec: &ConvSpec) -> Result<()> {
    match (bias, spec.bias) {
        (Some(b), true) if b.shape() == [channels] => Ok(()),
        (Some(b), true) => Err(Error::shape(format!("bias {:?}, expected [{channels}]", b.shape()))),
        (None, false) => Ok(()),
        (Some(_), false) => Err(Error::invalid("bias given for a bias-free conv")),
        (None, true) => Err(Error::invalid("conv spec requires a bias")),
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for px in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in px.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn channel_sums<T: Real>(grad: &[T], channels: usize) -> Tensor<T> {
    let mut sums = vec![T::zero(); channels];
    for px in grad.chunks_exact(channels) {
        for (s, &g) in sums.iter_mut().zip(px) {
            *s += g;
        }
    }
    Tensor::from_vec(&[channels], sums).unwrap()
}

fn forward_geometry<T: Real>(x: &Tensor<T>, spec: &ConvSpec) -> Result<Geometry> {
    let (n, h, w, c) = x.dims4()?;
    if c != spec.c_in {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {c}",
            spec.c_in
        )));
    }
    Geometry::forward(n, h, w, spec)
}

/// Geometry of the forward conv whose adjoint maps an `h×w×c_in` input to
/// the transposed-conv output.
fn transpose_geometry<T: Real>(x: &Tensor<T>, spec: &ConvSpec) -> Result<Geometry> {
    spec.validate()?;
    let (n, h, w, c) = x.dims4()?;
    if c != spec.c_in {
        return Err(Error::shape(format!(
            "conv_transpose expects {} input channels, got {c}",
            spec.c_in
        )));
    }
    let (oh, ow) = spec.transpose_output_size(h, w);
    let adjoint = ConvSpec {
        c_in: spec.c_out,
        c_out: spec.c_in,
        ..*spec
    };
    let g = Geometry::forward(n, oh, ow, &adjoint)?;
    debug_assert_eq!((g.oh, g.ow), (h, w));
    Ok(g)
}

fn check_transpose_weights<T: Real>(weights: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    let want = [spec.k, spec.k, spec.c_out, spec.c_in];
    if weights.shape() != want {
        return Err(Error::shape(format!(
            "conv_transpose weights {:?}, expected {want:?}",
            weights.shape()
        )));
    }
    Ok(())
}

fn conv_forward_raw<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: &Geometry, c_out: usize) -> Vec<T> {
    let mut out = vec![T::zero(); g.rows() * c_out];
    if g.pointwise() {
        gemm(Trans::No, Trans::No, g.rows(), c_out, g.c, x, w, T::zero(), &mut out);
    } else {
        let cols = im2col(x, g);
        gemm(Trans::No, Trans::No, g.rows(), c_out, g.patch(), &cols, w, T::zero(), &mut out);
    }
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    out
}

/// Cross-correlation of `[n,h,w,c]` with `[k,k,c,c′]` weights.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = forward_geometry(x, spec)?;
    check_weights(weights, spec)?;
    check_bias(bias, spec.c_out, spec)?;
    let out = conv_forward_raw(x.data(), weights.data(), bias.map(|b| b.data()), &g, spec.c_out);
    Tensor::from_vec(&[g.n, g.oh, g.ow, spec.c_out], out)
}

fn transpose_forward_raw<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: &Geometry, c_in: usize) -> Vec<T> {
    // g describes the adjoint conv: input (the result here) has g.c channels,
    // output (our x) has c_in channels.
    let rows = g.rows();
    let mut cols = vec![T::zero(); rows * g.patch()];
    gemm(Trans::No, Trans::Yes, rows, g.patch(), c_in, x, w, T::zero(), &mut cols);
    let mut out = if g.pointwise() { cols } else { col2im(&cols, g) };
    if let Some(b) = bias {
        add_bias(&mut out, b);
    }
    out
}

/// Transposed convolution `[n,h,w,c] -> [n,h·s,w·s,c′]` (same padding)
/// with `[k,k,c′,c]` weights.
pub fn conv2d_transpose<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = transpose_geometry(x, spec)?;
    check_transpose_weights(weights, spec)?;
    check_bias(bias, spec.c_out, spec)?;
    let out = transpose_forward_raw(x.data(), weights.data(), bias.map(|b| b.data()), &g, spec.c_in);
    Tensor::from_vec(&[g.n, g.h, g.w, spec.c_out], out)
}

impl<T: Real> Graph<T> {
    pub fn conv2d(&mut self, x: Var, weights: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let out = conv2d(
            self.value(x),
            self.value(weights),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        let g = forward_geometry(self.value(x), spec)?;
        let c_out = spec.c_out;
        let mut parents = vec![x, weights];
        parents.extend(bias);
        self.record("conv2d", &parents, out, move |ctx| {
            let (x, w, dy) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let (rows, patch) = (g.rows(), g.patch());
            let cols;
            let cols_ref: &[T] = if g.pointwise() {
                x
            } else if ctx.needs[1] {
                cols = im2col(x, &g);
                &cols
            } else {
                &[]
            };
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); patch * c_out];
                gemm(Trans::Yes, Trans::No, patch, c_out, rows, cols_ref, dy, T::zero(), &mut dw);
                Tensor::from_vec(ctx.inputs[1].shape(), dw).unwrap()
            });
            let dx = ctx.needs[0].then(|| {
                let mut dcols = vec![T::zero(); rows * patch];
                gemm(Trans::No, Trans::Yes, rows, patch, c_out, dy, w, T::zero(), &mut dcols);
                let dx = if g.pointwise() { dcols } else { col2im(&dcols, &g) };
                Tensor::from_vec(ctx.inputs[0].shape(), dx).unwrap()
            });
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| channel_sums(dy, c_out)));
            }
            grads
        })
    }

    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        weights: Var,
        bias: Option<Var>,
        spec: &ConvSpec,
    ) -> Result<Var> {
        let out = conv2d_transpose(
            self.value(x),
            self.value(weights),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        let g = transpose_geometry(self.value(x), spec)?;
        let (c_in, c_out) = (spec.c_in, spec.c_out);
        let mut parents = vec![x, weights];
        parents.extend(bias);
        self.record("conv2d_transpose", &parents, out, move |ctx| {
            let (x, w, dy) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let (rows, patch) = (g.rows(), g.patch());
            let cols;
            let dcols: &[T] = if g.pointwise() {
                dy
            } else {
                cols = im2col(dy, &g);
                &cols
            };
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); rows * c_in];
                gemm(Trans::No, Trans::No, rows, c_in, patch, dcols, w, T::zero(), &mut dx);
                Tensor::from_vec(ctx.inputs[0].shape(), dx).unwrap()
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); patch * c_in];
                gemm(Trans::Yes, Trans::No, patch, c_in, rows, dcols, x, T::zero(), &mut dw);
                Tensor::from_vec(ctx.inputs[1].shape(), dw).unwrap()
            });
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| channel_sums(dy, c_out)));
            }
            grads
        })
    }
}
