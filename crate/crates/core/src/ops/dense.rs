//! Fully-connected layer and pointwise activations.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::linalg::{gemm, Trans};
use crate::real::Real;
use crate::tensor::Tensor;

/// `[n,f] · [f,u] + [u]`.
pub fn dense<T: Real>(x: &Tensor<T>, weights: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, f) = x.dims2()?;
    let (wf, u) = weights.dims2()?;
    if wf != f {
        return Err(Error::shape(format!("dense: input has {f} features, weights expect {wf}")));
    }
    if let Some(b) = bias {
        if b.shape() != [u] {
            return Err(Error::shape(format!("dense bias {:?}, expected [{u}]", b.shape())));
        }
    }
    let mut out = vec![T::zero(); n * u];
    gemm(Trans::No, Trans::No, n, u, f, x.data(), weights.data(), T::zero(), &mut out);
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(u) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Tensor::from_vec(&[n, u], out)
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn unary<T: Real>(
    g: &mut Graph<T>,
    op: &'static str,
    x: Var,
    f: impl Fn(T) -> T,
    // derivative from (input, output)
    df: impl Fn(T, T) -> T + 'static,
) -> Result<Var> {
    let out = g.value(x).map(f);
    g.record(op, &[x], out, move |ctx| {
        let d = ctx
            .grad
            .data()
            .iter()
            .zip(ctx.inputs[0].data())
            .zip(ctx.output.data())
            .map(|((&gr, &i), &o)| gr * df(i, o))
            .collect();
        vec![Some(Tensor::from_vec(ctx.inputs[0].shape(), d).unwrap())]
    })
}

impl<T: Real> Graph<T> {
    pub fn dense(&mut self, x: Var, weights: Var, bias: Option<Var>) -> Result<Var> {
        let out = dense(self.value(x), self.value(weights), bias.map(|b| self.value(b)))?;
        let mut parents = vec![x, weights];
        parents.extend(bias);
        self.record("dense", &parents, out, |ctx| {
            let (x, w, dy) = (ctx.inputs[0], ctx.inputs[1], ctx.grad.data());
            let (n, f) = x.dims2().unwrap();
            let u = w.shape()[1];
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![T::zero(); n * f];
                gemm(Trans::No, Trans::Yes, n, f, u, dy, w.data(), T::zero(), &mut dx);
                Tensor::from_vec(&[n, f], dx).unwrap()
            });
            let dw = ctx.needs[1].then(|| {
                let mut dw = vec![T::zero(); f * u];
                gemm(Trans::Yes, Trans::No, f, u, n, x.data(), dy, T::zero(), &mut dw);
                Tensor::from_vec(&[f, u], dw).unwrap()
            });
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| {
                    let mut db = vec![T::zero(); u];
                    for row in dy.chunks_exact(u) {
                        for (a, &g) in db.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    Tensor::from_vec(&[u], db).unwrap()
                }));
            }
            grads
        })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        unary(
            self,
            "relu",
            x,
            |v| if v > T::zero() { v } else { T::zero() },
            |i, _| if i > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        unary(self, "tanh", x, |v| v.tanh(), |_, o| T::one() - o * o)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        unary(self, "sigmoid", x, sigmoid, |_, o| o * (T::one() - o))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn dense_small_example() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 0.5, -1.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.25, 0.0]).unwrap();
        let y = dense(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[-0.75, 6.5]);
        let bad = Tensor::<f64>::zeros(&[3, 2]);
        assert!(dense(&x, &bad, None).is_err());
    }
}
