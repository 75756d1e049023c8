//! Central finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

pub mod suite;

fn evaluate<T: Real, F>(f: &F, x: &Tensor<T>) -> Result<f64>
where
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = f(&mut g, xv)?;
    let v = g.value(out).item()?.as_f64();
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    Ok(v)
}

/// Compares the backprop gradient of a scalar function `f` at `x` with the
/// fourth-order central difference
/// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, `h = eps · max(1, |xᵢ|)`,
/// and returns
/// `max |analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` receives a fresh graph and the handle of `x` on it, and must return
/// a scalar. A non-scalar or non-finite output is an error.
pub fn finite_diff_check<T: Real, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let out = f(&mut g, xv)?;
    if !g.value(out).item()?.as_f64().is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" });
    }
    let analytic = g
        .backward(out)?
        .take(xv)
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        let h = eps * orig.as_f64().abs().max(1.0);
        let mut at = |offset: f64| -> Result<f64> {
            probe.data_mut()[i] = T::from_f64(orig.as_f64() + offset);
            evaluate(&f, &probe)
        };
        let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        probe.data_mut()[i] = orig;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        let a = analytic.data()[i].as_f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
