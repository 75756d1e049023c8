//! Batch normalization over every axis except the trailing channel axis.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// Running statistics of one batch-norm layer. The learned scale and shift
/// live with the other trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    /// Biased batch variance, exponentially averaged. Never negative.
    pub running_var: Vec<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64(BN_MOMENTUM),
            epsilon: T::from_f64(BN_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

fn channels_of<T: Real>(x: &Tensor<T>) -> Result<usize> {
    match x.shape() {
        [_, .., c] if x.rank() >= 2 => Ok(*c),
        s => Err(Error::shape(format!("batch_norm needs rank >= 2, got {s:?}"))),
    }
}

fn batch_stats<T: Real>(x: &[T], c: usize) -> (Vec<T>, Vec<T>) {
    let m = T::from_f64((x.len() / c) as f64);
    let mut mean = vec![T::zero(); c];
    for px in x.chunks_exact(c) {
        for (a, &v) in mean.iter_mut().zip(px) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![T::zero(); c];
    for px in x.chunks_exact(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|a| *a /= m);
    (mean, var)
}

impl<T: Real> Graph<T> {
    /// Training mode normalizes with batch statistics and folds them into
    /// `state`; evaluation mode uses the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        training: bool,
    ) -> Result<Var> {
        let xv = self.value(x);
        let c = channels_of(xv)?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::shape(format!(
                    "batch_norm {name} {:?}, expected [{c}]",
                    self.value(v).shape()
                )));
            }
        }
        if state.channels() != c {
            return Err(Error::shape(format!(
                "batch_norm state has {} channels, input {c}",
                state.channels()
            )));
        }
        let eps = state.epsilon;
        let (mean, var) = if training {
            let (mean, var) = batch_stats(xv.data(), c);
            let mom = state.momentum;
            for ch in 0..c {
                state.running_mean[ch] = mom * state.running_mean[ch] + (T::one() - mom) * mean[ch];
                state.running_var[ch] = mom * state.running_var[ch] + (T::one() - mom) * var[ch];
            }
            (mean, var)
        } else {
            (state.running_mean.clone(), state.running_var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = Vec::with_capacity(xv.len());
        for px in xv.data().chunks_exact(c) {
            for ch in 0..c {
                out.push(g[ch] * (px[ch] - mean[ch]) * inv_std[ch] + b[ch]);
            }
        }
        let out = Tensor::from_vec(xv.shape(), out)?;
        self.record("batch_norm", &[x, gamma, beta], out, move |ctx| {
            let (x, gamma, dy) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let m = T::from_f64((x.len() / c) as f64);
            let mut sum_dy = vec![T::zero(); c];
            let mut sum_dy_xhat = vec![T::zero(); c];
            for (px, gp) in x.chunks_exact(c).zip(dy.chunks_exact(c)) {
                for ch in 0..c {
                    let xhat = (px[ch] - mean[ch]) * inv_std[ch];
                    sum_dy[ch] += gp[ch];
                    sum_dy_xhat[ch] += gp[ch] * xhat;
                }
            }
            let dx = ctx.needs[0].then(|| {
                let mut dx = Vec::with_capacity(x.len());
                for (px, gp) in x.chunks_exact(c).zip(dy.chunks_exact(c)) {
                    for ch in 0..c {
                        let scale = gamma[ch] * inv_std[ch];
                        if training {
                            let xhat = (px[ch] - mean[ch]) * inv_std[ch];
                            dx.push(scale * (gp[ch] - (sum_dy[ch] + xhat * sum_dy_xhat[ch]) / m));
                        } else {
                            dx.push(scale * gp[ch]);
                        }
                    }
                }
                Tensor::from_vec(ctx.inputs[0].shape(), dx).unwrap()
            });
            vec![
                dx,
                Some(Tensor::from_vec(&[c], sum_dy_xhat).unwrap()),
                Some(Tensor::from_vec(&[c], sum_dy).unwrap()),
            ]
        })
    }
}
