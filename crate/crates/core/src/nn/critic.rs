use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{leaky_mask, ConvLayer, DenseLayer, LEAKY_SLOPE};
use super::params::ParameterSet;
use super::Critic;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub conv_layers: usize,
}

impl Default for CriticSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 16,
            conv_layers: 4,
        }
    }
}

impl CriticSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "critic in_channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.conv_layers < 2 || self.conv_layers > 8 {
            return Err(Error::InvalidArgument(format!(
                "critic conv_layers must be in 2..=8, got {}",
                self.conv_layers
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidArgument("critic base_channels must be positive".into()));
        }
        Ok(())
    }
}

/// Stride-2 convolutions with leaky activations, global average pooling and
/// a dense head. Every sample is processed independently.
#[derive(Clone, Debug)]
pub(crate) struct ConvStack {
    pub in_channels: usize,
    pub convs: Vec<ConvLayer>,
    pub head: DenseLayer,
}

impl ConvStack {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        p: &mut ParameterSet<T>,
        in_channels: usize,
        base_channels: usize,
        layers: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let mut c = in_channels;
        let mut convs = Vec::with_capacity(layers);
        for l in 0..layers {
            let o = base_channels << l;
            convs.push(ConvLayer::build(p, &format!("conv{l}"), c, o, 3, 2, false, rng));
            c = o;
        }
        let head = DenseLayer::build(p, "head", c, outputs, false, rng);
        Self {
            in_channels,
            convs,
            head,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        match shape {
            [n, c, h, w] if *n > 0 && *c == self.in_channels && *h > 0 && *w > 0 => Ok(()),
            _ => Err(Error::ShapeMismatch(format!(
                "expected [N, {}, H, W], got {shape:?}",
                self.in_channels
            ))),
        }
    }

    /// `[N, C, H, W] -> [N, outputs]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        let slope = T::of(LEAKY_SLOPE);
        let mut h = x;
        for c in &self.convs {
            let z = c.forward(tape, p, h);
            h = tape.leaky_relu(z, slope);
        }
        let pooled = tape.mean_hw(h);
        self.head.forward(tape, p, pooled)
    }

    /// Outputs together with their directional derivatives along `v`.
    pub fn forward_tangent<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: Var,
        v: Var,
    ) -> (Var, Var) {
        let slope = T::of(LEAKY_SLOPE);
        let (mut h, mut t) = (x, v);
        for c in &self.convs {
            let z = c.forward(tape, p, h);
            let tz = c.forward_linear(tape, p, t);
            let mask = leaky_mask(tape, z);
            h = tape.leaky_relu(z, slope);
            t = tape.mul_const(tz, mask);
        }
        let pooled = tape.mean_hw(h);
        let tpooled = tape.mean_hw(t);
        (
            self.head.forward(tape, p, pooled),
            self.head.forward_linear(tape, p, tpooled),
        )
    }
}

/// Convolutional critic producing one real value per image.
#[derive(Clone, Debug)]
pub struct ConvCritic<T> {
    spec: CriticSpec,
    params: ParameterSet<T>,
    body: ConvStack,
}

impl<T: Scalar> ConvCritic<T> {
    pub fn new<R: Rng + ?Sized>(spec: CriticSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParameterSet::new();
        let body = ConvStack::build(
            &mut params,
            spec.in_channels,
            spec.base_channels,
            spec.conv_layers,
            1,
            rng,
        );
        Ok(Self { spec, params, body })
    }

    pub fn spec(&self) -> &CriticSpec {
        &self.spec
    }
}

impl<T: Scalar> Critic<T> for ConvCritic<T> {
    fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        self.body.check_input(shape)
    }

    fn score(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        let n = tape.shape(x)[0];
        let y = self.body.forward(tape, p, x);
        tape.reshape(y, &[n])
    }

    fn score_tangent(&self, tape: &mut Tape<T>, p: &[Var], x: Var, v: Var) -> (Var, Var) {
        let n = tape.shape(x)[0];
        let (y, t) = self.body.forward_tangent(tape, p, x, v);
        (tape.reshape(y, &[n]), tape.reshape(t, &[n]))
    }
}
