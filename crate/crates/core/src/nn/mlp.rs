//! Dense networks for low-dimensional point clouds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{leaky_mask, DenseLayer, LEAKY_SLOPE};
use super::params::ParameterSet;
use super::{Critic, Generator};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSpec {
    pub dim: usize,
    pub hidden: Vec<usize>,
    /// Generator only: add the input to a zero-initialised output layer so
    /// the untrained map is the identity.
    pub residual: bool,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            dim: 1,
            hidden: vec![32, 32],
            residual: true,
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidArgument(format!("invalid mlp widths {self:?}")));
        }
        Ok(())
    }
}

fn check_rows(dim: usize, shape: &[usize]) -> Result<()> {
    match shape {
        [n, d] if *n > 0 && *d == dim => Ok(()),
        _ => Err(Error::ShapeMismatch(format!("expected [N, {dim}], got {shape:?}"))),
    }
}

#[derive(Clone, Debug)]
struct Dense {
    hidden: Vec<DenseLayer>,
    out: DenseLayer,
}

impl Dense {
    fn build<T: Scalar, R: Rng + ?Sized>(
        p: &mut ParameterSet<T>,
        dim: usize,
        hidden: &[usize],
        outputs: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Self {
        let mut d = dim;
        let mut layers = Vec::new();
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(DenseLayer::build(p, &format!("fc{i}"), d, h, false, rng));
            d = h;
        }
        let out = DenseLayer::build(p, "out", d, outputs, zero_out, rng);
        Self { hidden: layers, out }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        let slope = T::of(LEAKY_SLOPE);
        let mut h = x;
        for l in &self.hidden {
            let z = l.forward(tape, p, h);
            h = tape.leaky_relu(z, slope);
        }
        self.out.forward(tape, p, h)
    }

    fn forward_tangent<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var, v: Var) -> (Var, Var) {
        let slope = T::of(LEAKY_SLOPE);
        let (mut h, mut t) = (x, v);
        for l in &self.hidden {
            let z = l.forward(tape, p, h);
            let tz = l.forward_linear(tape, p, t);
            let mask = leaky_mask(tape, z);
            h = tape.leaky_relu(z, slope);
            t = tape.mul_const(tz, mask);
        }
        (self.out.forward(tape, p, h), self.out.forward_linear(tape, p, t))
    }
}

/// Dense transport map `R^d -> R^d`.
#[derive(Clone, Debug)]
pub struct MlpGenerator<T> {
    spec: MlpSpec,
    params: ParameterSet<T>,
    net: Dense,
}

impl<T: Scalar> MlpGenerator<T> {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParameterSet::new();
        let net = Dense::build(&mut params, spec.dim, &spec.hidden, spec.dim, spec.residual, rng);
        Ok(Self { spec, params, net })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }
}

impl<T: Scalar> Generator<T> for MlpGenerator<T> {
    fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        check_rows(self.spec.dim, shape)
    }

    fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        let y = self.net.forward(tape, p, x);
        if self.spec.residual {
            tape.add(x, y)
        } else {
            y
        }
    }
}

/// Dense critic `R^d -> R`.
#[derive(Clone, Debug)]
pub struct MlpCritic<T> {
    spec: MlpSpec,
    params: ParameterSet<T>,
    net: Dense,
}

impl<T: Scalar> MlpCritic<T> {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParameterSet::new();
        let net = Dense::build(&mut params, spec.dim, &spec.hidden, 1, false, rng);
        Ok(Self { spec, params, net })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }
}

impl<T: Scalar> Critic<T> for MlpCritic<T> {
    fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        check_rows(self.spec.dim, shape)
    }

    fn score(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        let n = tape.shape(x)[0];
        let y = self.net.forward(tape, p, x);
        tape.reshape(y, &[n])
    }

    fn score_tangent(&self, tape: &mut Tape<T>, p: &[Var], x: Var, v: Var) -> (Var, Var) {
        let n = tape.shape(x)[0];
        let (y, t) = self.net.forward_tangent(tape, p, x, v);
        (tape.reshape(y, &[n]), tape.reshape(t, &[n]))
    }
}
