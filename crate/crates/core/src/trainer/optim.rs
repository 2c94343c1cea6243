use serde::{Deserialize, Serialize};

use crate::diff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, store: &ParamStore<S>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![S::zero(); p.value.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[S] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[S] {
        &self.v[index]
    }

    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        check_finite(store)?;
        self.step += 1;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let c1 = S::one() - S::lit(self.beta1.powi(self.step));
        let c2 = S::one() - S::lit(self.beta2.powi(self.step));
        let lr = S::lit(self.lr);
        let eps = S::lit(self.eps);
        for (k, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, x) in p.value.data_mut().iter_mut().enumerate() {
                let g = p.grad[j];
                m[j] = b1 * m[j] + (S::one() - b1) * g;
                v[j] = b2 * v[j] + (S::one() - b2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        check_finite(store)?;
        let lr = S::lit(self.lr);
        for p in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            for (x, &g) in p.value.data_mut().iter_mut().zip(&p.grad) {
                *x -= lr * g;
            }
        }
        Ok(())
    }
}

fn check_finite<S: Scalar>(store: &ParamStore<S>) -> Result<()> {
    for (_, p) in store.iter() {
        if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub enum Optimizer<S> {
    Adam(Adam<S>),
    Sgd(Sgd),
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind, lr: f64, store: &ParamStore<S>) -> Self {
        match kind {
            OptimizerKind::Adam => Self::Adam(Adam::new(lr, store)),
            OptimizerKind::Sgd => Self::Sgd(Sgd { lr }),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        match self {
            Self::Adam(a) => a.step(store),
            Self::Sgd(s) => s.step(store),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tensor;

    fn single(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(value), true).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = single(0.7);
        let mut adam = Adam::new(0.001, &s);
        for _ in 0..3 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.value(s.id("x").unwrap()).item(), 0.7);
        assert_eq!(adam.first_moment(0), &[0.0]);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut s = single(0.0);
        let id = s.id("x").unwrap();
        let mut adam = Adam::new(0.001, &s);
        s.get_mut(id).grad[0] = 1.0;
        adam.step(&mut s).unwrap();
        let m1 = adam.first_moment(0)[0];
        s.zero_grad();
        adam.step(&mut s).unwrap();
        assert!((adam.first_moment(0)[0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn three_steps_match_scalar_oracle() {
        // hand-iterated Adam on f(x) = x^2 starting at x = 1
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            expected.push(x);
        }
        let mut s = single(1.0);
        let id = s.id("x").unwrap();
        let mut adam = Adam::new(lr, &s);
        for e in expected {
            s.zero_grad();
            let x = s.value(id).item();
            s.get_mut(id).grad[0] = 2.0 * x;
            adam.step(&mut s).unwrap();
            assert!((s.value(id).item() - e).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut s = single(0.0);
        let id = s.id("x").unwrap();
        let mut adam = Adam::new(0.001, &s);
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..2000 {
            s.get_mut(id).grad[0] = 0.37;
            adam.step(&mut s).unwrap();
            let x = s.value(id).item();
            last_step = (x - prev).abs();
            prev = x;
        }
        assert!((last_step - 0.001).abs() < 1e-6, "{last_step}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = single(0.0);
        let id = s.id("x").unwrap();
        s.get_mut(id).grad[0] = f64::NAN;
        let err = Adam::new(0.1, &s).step(&mut s).unwrap_err();
        assert!(err.to_string().contains("`x`"));
    }
}
