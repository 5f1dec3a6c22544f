use super::params::ParameterSet;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// RMSprop: `v = rho v + (1 - rho) g^2`, `p -= lr g / (sqrt(v) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp<T> {
    pub rho: f64,
    pub eps: f64,
    square_avg: ParameterSet<T>,
}

impl<T: Scalar> RmsProp<T> {
    pub const DEFAULT_RHO: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-8;

    /// Zero accumulators shaped like `params`.
    pub fn new(params: &ParameterSet<T>) -> Self {
        let mut square_avg = ParameterSet::new();
        for (n, t) in params.iter() {
            square_avg.push(n, Tensor::zeros(t.shape()));
        }
        Self {
            rho: Self::DEFAULT_RHO,
            eps: Self::DEFAULT_EPS,
            square_avg,
        }
    }

    pub fn state(&self) -> &ParameterSet<T> {
        &self.square_avg
    }

    pub fn set_state(&mut self, state: &ParameterSet<T>) -> Result<()> {
        self.square_avg.assign(state)
    }

    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>, lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.square_avg.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} arrays, got {} params and {} grads",
                self.square_avg.len(),
                params.len(),
                grads.len()
            )));
        }
        let (rho, eps, lr) = (T::of(self.rho), T::of(self.eps), T::of(lr));
        let one = T::one();
        for i in 0..params.len() {
            let g = grads.at(i);
            let v = self.square_avg.at_mut(i);
            if g.shape() != v.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient {:?} vs accumulator {:?}",
                    g.shape(),
                    v.shape()
                )));
            }
            for (v, &g) in v.data_mut().iter_mut().zip(g.data()) {
                *v = rho * *v + (one - rho) * g * g;
            }
            let v = self.square_avg.at(i);
            let p = params.at_mut(i);
            for ((p, &g), &v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data()) {
                *p -= lr * g / (v.sqrt() + eps);
            }
        }
        Ok(())
    }
}
