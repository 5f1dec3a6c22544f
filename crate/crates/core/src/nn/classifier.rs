use rand::Rng;
use serde::{Deserialize, Serialize};

use super::critic::ConvStack;
use super::params::ParameterSet;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub conv_layers: usize,
    pub classes: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 8,
            conv_layers: 3,
            classes: 3,
        }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 3) || self.base_channels == 0 {
            return Err(Error::InvalidArgument(format!("invalid classifier spec {self:?}")));
        }
        if self.conv_layers < 1 || self.conv_layers > 8 {
            return Err(Error::InvalidArgument(format!(
                "classifier conv_layers must be in 1..=8, got {}",
                self.conv_layers
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument("classifier needs at least two classes".into()));
        }
        Ok(())
    }
}

/// Small convolutional classifier producing class logits per image.
#[derive(Clone, Debug)]
pub struct ConvClassifier<T> {
    spec: ClassifierSpec,
    params: ParameterSet<T>,
    body: ConvStack,
}

impl<T: Scalar> ConvClassifier<T> {
    pub fn new<R: Rng + ?Sized>(spec: ClassifierSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParameterSet::new();
        let body = ConvStack::build(
            &mut params,
            spec.in_channels,
            spec.base_channels,
            spec.conv_layers,
            spec.classes,
            rng,
        );
        Ok(Self { spec, params, body })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        self.body.check_input(shape)
    }

    /// `[N, C, H, W] -> [N, classes]`.
    pub fn logits(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        self.body.forward(tape, p, x)
    }

    /// Softmax class probabilities, one row per image.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        self.check_input(x.shape())?;
        let mut tape = Tape::new();
        let p = self.params.attach_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let l = self.logits(&mut tape, &p, xv);
        let v = tape.value(l);
        Ok((0..v.rows()).map(|i| softmax(v.row(i))).collect())
    }
}

pub(crate) fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = row.iter().map(|&x| (x - m).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / z).collect()
}
