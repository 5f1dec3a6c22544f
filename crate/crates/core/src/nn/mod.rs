//! Generator, critic and classifier networks built on the autodiff tape.
//!
//! Networks hold their parameters in a [`ParameterSet`]; a forward pass takes
//! the parameters attached to a tape (`params().attach(..)` to differentiate,
//! `attach_frozen` otherwise) so one tape can mix several networks.

mod checkpoint;
mod classifier;
mod critic;
mod eca;
mod layers;
mod mlp;
mod optim;
mod params;
mod unet;

#[cfg(test)]
mod tests;

pub use checkpoint::{load_parameters, recorded_checksum, save_parameters, Container};
pub(crate) use checkpoint::unix_now;
pub use classifier::{ClassifierSpec, ConvClassifier};
pub use critic::{ConvCritic, CriticSpec};
pub use eca::{eca_kernel_size, EcaGate};
pub use mlp::{MlpCritic, MlpGenerator, MlpSpec};
pub use optim::RmsProp;
pub use params::{fingerprint, ParameterSet};
pub use unet::{GeneratorSpec, UNetGenerator, LOGIT_EPS};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// A transport map `G_theta`.
pub trait Generator<T: Scalar> {
    fn params(&self) -> &ParameterSet<T>;
    fn params_mut(&mut self) -> &mut ParameterSet<T>;
    fn check_input(&self, shape: &[usize]) -> Result<()>;
    /// Records the forward pass; the output has the input's shape.
    fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var;

    /// Plain evaluation without gradients.
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let p = self.params().attach_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &p, xv);
        Ok(tape.value(y).clone())
    }
}

/// A scalar critic `D_w`, evaluated independently per sample.
pub trait Critic<T: Scalar> {
    fn params(&self) -> &ParameterSet<T>;
    fn params_mut(&mut self) -> &mut ParameterSet<T>;
    fn check_input(&self, shape: &[usize]) -> Result<()>;
    /// `[N, ...] -> [N]`.
    fn score(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var;
    /// Scores together with the directional derivatives
    /// `d/dt D(x_i + t v_i)` at `t = 0`, both `[N]`.
    fn score_tangent(&self, tape: &mut Tape<T>, p: &[Var], x: Var, v: Var) -> (Var, Var);

    fn evaluate(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let p = self.params().attach_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let s = self.score(&mut tape, &p, xv);
        Ok(tape.value(s).data().to_vec())
    }

    /// Scores and per-sample input gradients `grad_x D(x_i)`.
    fn input_gradient(&self, x: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let p = self.params().attach_frozen(&mut tape);
        let xv = tape.leaf(x.clone());
        let s = self.score(&mut tape, &p, xv);
        let total = tape.sum_all(s);
        let g = tape.backward(total);
        Ok((tape.value(s).data().to_vec(), g.wrt(xv)))
    }
}
