use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Adam with bias correction and decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(shapes: &[&[usize]], weight_decay: f64) -> Self {
        let zeros = || shapes.iter().map(|s| vec![0.0; s.iter().product()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn for_params<T: Real>(params: &[Tensor<T>], weight_decay: f64) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(Tensor::shape).collect();
        Adam::new(&shapes, weight_decay)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`:
    /// `p -= lr · m̂ / (√v̂ + eps)`, then `p -= lr · wd · p`.
    pub fn step<T: Real>(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape(format!(
                "adam: {} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.m[i].len() {
                return Err(Error::shape(format!(
                    "adam: param {i} {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let decay = lr * self.weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj.as_f64();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                let mut x = pj.as_f64() - update;
                x -= decay * x;
                *pj = T::from_f64(x);
            }
        }
        Ok(())
    }
}

/// Step schedule: `base · factor^k` where `k` counts milestones `≤ epoch`.
pub fn lr_at(epoch: usize, base: f64, milestones: &[usize], factor: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| epoch >= m).count();
    base * factor.powi(passed as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_vec(&[1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut p = one(0.37);
        let mut adam = Adam::for_params(&p, 0.0);
        for _ in 0..10 {
            adam.step(&mut p, &one(0.0), 0.01).unwrap();
        }
        assert_eq!(p[0].data()[0], 0.37);
    }

    #[test]
    fn decoupled_decay_arithmetic() {
        let mut p = one(1.0);
        let mut adam = Adam::for_params(&p, 0.01);
        adam.step(&mut p, &one(0.0), 0.001).unwrap();
        assert!((p[0].data()[0] - 0.99999).abs() < 1e-15);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut p = one(0.0);
        let mut adam = Adam::for_params(&p, 0.0);
        adam.step(&mut p, &one(-3.0), 0.01).unwrap();
        assert!((p[0].data()[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_update_approaches_lr() {
        let mut p = one(0.0);
        let mut adam = Adam::for_params(&p, 0.0);
        let lr = 0.001;
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = p[0].data()[0];
            adam.step(&mut p, &one(0.5), lr).unwrap();
            last = before - p[0].data()[0];
        }
        // m̂ = g and v̂ = g² exactly for a constant gradient.
        let expected = lr * 0.5 / (0.5 + 1e-8);
        assert!((last - expected).abs() < 1e-12, "{last}");
    }

    #[test]
    fn shape_mismatch() {
        let mut p = one(0.0);
        let mut adam = Adam::for_params(&p, 0.0);
        let g = vec![Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap()];
        assert!(adam.step(&mut p, &g, 0.1).is_err());
        assert!(adam.step(&mut p, &[], 0.1).is_err());
    }

    #[test]
    fn schedule() {
        let ms = [200, 400, 600, 800];
        assert_eq!(lr_at(0, 0.01, &ms, 0.1), 0.01);
        assert!((lr_at(199, 0.01, &ms, 0.1) - 0.01).abs() < 1e-18);
        assert!((lr_at(200, 0.01, &ms, 0.1) - 0.001).abs() < 1e-15);
        assert!((lr_at(999, 0.01, &ms, 0.1) - 1e-6).abs() < 1e-18);
    }
}
