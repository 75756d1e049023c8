//! Scalar training losses, each averaged over its batch.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Row-wise log-softmax.
pub fn log_softmax<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
        out.extend(row.iter().map(|&z| z - lse));
    }
    out
}

/// `max(z,0) − z·t + log(1 + exp(−|z|))`.
pub fn stable_bce<T: Real>(z: T, t: T) -> T {
    z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p()
}

impl<T: Real> Graph<T> {
    /// Mean over the batch of `−log softmax(logits)[target]`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(Error::shape(format!("softmax_xent: {n} rows, {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::invalid(format!("target index {bad} outside [0, {k})")));
        }
        let logp = log_softmax(self.value(logits).data(), k);
        let nt = T::from_f64(n as f64);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -logp[i * k + t])
            .sum::<T>()
            / nt;
        let targets = targets.to_vec();
        self.record("softmax_xent", &[logits], Tensor::scalar(loss), move |ctx| {
            let scale = ctx.grad.data()[0] / nt;
            let mut d: Vec<T> = logp.iter().map(|&lp| lp.exp() * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                d[i * k + t] -= scale;
            }
            vec![Some(Tensor::from_vec(&[n, k], d).unwrap())]
        })
    }

    /// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
    pub fn sigmoid_xent(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::shape(format!(
                "sigmoid_xent: logits {:?} vs targets {:?}",
                z.shape(),
                targets.shape()
            )));
        }
        if targets.data().iter().any(|&t| t != T::zero() && t != T::one()) {
            return Err(Error::invalid("sigmoid_xent targets must be 0 or 1"));
        }
        let count = T::from_f64(z.len() as f64);
        let loss = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| stable_bce(z, t))
            .sum::<T>()
            / count;
        let targets = targets.clone();
        self.record("sigmoid_xent", &[logits], Tensor::scalar(loss), move |ctx| {
            let scale = ctx.grad.data()[0] / count;
            let d = ctx.inputs[0]
                .data()
                .iter()
                .zip(targets.data())
                .map(|(&z, &t)| (crate::ops::dense::sigmoid(z) - t) * scale)
                .collect();
            vec![Some(Tensor::from_vec(ctx.inputs[0].shape(), d).unwrap())]
        })
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape(format!(
                "mse_loss: pred {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        let count = T::from_f64(p.len() as f64);
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / count;
        let target = target.clone();
        self.record("mse_loss", &[pred], Tensor::scalar(loss), move |ctx| {
            let scale = T::from_f64(2.0) * ctx.grad.data()[0] / count;
            let d = ctx.inputs[0]
                .data()
                .iter()
                .zip(target.data())
                .map(|(&a, &b)| (a - b) * scale)
                .collect();
            vec![Some(Tensor::from_vec(ctx.inputs[0].shape(), d).unwrap())]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_of(g: &Graph<f64>, v: Var) -> f64 {
        g.value(v).item().unwrap()
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let mut g = Graph::new();
        let z = g.param(Tensor::zeros(&[3, 4096]));
        let l = g.softmax_xent(z, &[0, 17, 4095]).unwrap();
        assert!((scalar_of(&g, l) - 8.317766166719343).abs() < 1e-12);
    }

    #[test]
    fn saturated_target_has_near_zero_loss() {
        let mut logits = Tensor::<f64>::zeros(&[1, 4096]);
        logits.data_mut()[5] = 30.0;
        let mut g = Graph::new();
        let z = g.param(logits);
        let l = g.softmax_xent(z, &[5]).unwrap();
        assert!(scalar_of(&g, l) < 1e-9);
    }

    #[test]
    fn softmax_gradient_is_probabilities_minus_onehot() {
        let logits = Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 0.5]).unwrap();
        let mut g = Graph::new();
        let z = g.param(logits.clone());
        let l = g.softmax_xent(z, &[1]).unwrap();
        let grad = g.backward(l).unwrap().get(z).unwrap().clone();
        let e: Vec<f64> = logits.data().iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        let want = [e[0] / s, e[1] / s - 1.0, e[2] / s];
        for (a, b) in grad.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn target_out_of_range() {
        let mut g = Graph::<f64>::new();
        let z = g.param(Tensor::zeros(&[1, 10]));
        assert!(matches!(g.softmax_xent(z, &[10]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_logits_give_ln2() {
        let mut g = Graph::new();
        let z = g.param(Tensor::zeros(&[2, 64, 64, 1]));
        let mut t = Tensor::zeros(&[2, 64, 64, 1]);
        t.data_mut()[100] = 1.0;
        let l = g.sigmoid_xent(z, &t).unwrap();
        assert!((scalar_of(&g, l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_pixels_have_near_zero_loss() {
        let mut t = Tensor::<f64>::zeros(&[1, 8, 8, 1]);
        for i in [3, 9, 40] {
            t.data_mut()[i] = 1.0;
        }
        let z = t.map(|v| if v == 1.0 { 30.0 } else { -30.0 });
        let mut g = Graph::new();
        let zv = g.param(z);
        let l = g.sigmoid_xent(zv, &t).unwrap();
        assert!(scalar_of(&g, l) < 1e-9);
    }

    #[test]
    fn stable_form_matches_naive_formula() {
        for i in -50..=50 {
            let z = i as f64 / 10.0;
            for t in [0.0, 1.0] {
                let p = 1.0 / (1.0 + (-z).exp());
                let naive = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
                assert!((stable_bce(z, t) - naive).abs() < 1e-6 * naive.max(1.0));
            }
        }
    }

    #[test]
    fn non_binary_targets_rejected() {
        let mut g = Graph::<f64>::new();
        let z = g.param(Tensor::zeros(&[2]));
        let t = Tensor::from_vec(&[2], vec![0.0, 0.5]).unwrap();
        assert!(g.sigmoid_xent(z, &t).is_err());
    }

    #[test]
    fn mse_values() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let same = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let off = same.map(|v| v - 1.0);
        let l0 = g.mse_loss(p, &same).unwrap();
        let l1 = g.mse_loss(p, &off).unwrap();
        assert_eq!(scalar_of(&g, l0), 0.0);
        assert_eq!(scalar_of(&g, l1), 1.0);
    }
}
