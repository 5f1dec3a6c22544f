use rand::Rng;
use serde::{Deserialize, Serialize};

use super::eca::EcaLayer;
use super::layers::{ConvLayer, LEAKY_SLOPE};
use super::params::ParameterSet;
use super::Generator;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Clamp applied before the logit skip so saturated pixels stay finite.
pub const LOGIT_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub residual_blocks: usize,
    pub eca_enabled: bool,
    pub eca_gamma: f64,
    pub eca_beta: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 16,
            depth: 2,
            residual_blocks: 3,
            eca_enabled: true,
            eca_gamma: 2.0,
            eca_beta: 1.0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "generator in_channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.depth < 1 || self.depth > 8 {
            return Err(Error::InvalidArgument(format!(
                "generator depth must be in 1..=8, got {}",
                self.depth
            )));
        }
        if self.base_channels < 4 {
            return Err(Error::InvalidArgument(format!(
                "generator base_channels must be >= 4, got {}",
                self.base_channels
            )));
        }
        if self.eca_enabled
            && !(self.eca_gamma.is_finite() && self.eca_gamma != 0.0 && self.eca_beta.is_finite())
        {
            return Err(Error::InvalidArgument("eca gamma/beta must be finite, gamma != 0".into()));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: ConvLayer,
    conv2: ConvLayer,
    eca: Option<EcaLayer>,
}

/// U-shaped generator with ECA-gated residual blocks at the bottleneck.
///
/// The head is zero-initialised and added to the logit of the input, so an
/// untrained generator reproduces its input up to the clamp in
/// [`LOGIT_EPS`].
#[derive(Clone, Debug)]
pub struct UNetGenerator<T> {
    spec: GeneratorSpec,
    params: ParameterSet<T>,
    stem: ConvLayer,
    downs: Vec<ConvLayer>,
    blocks: Vec<ResBlock>,
    ups: Vec<ConvLayer>,
    head: ConvLayer,
}

impl<T: Scalar> UNetGenerator<T> {
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut p = ParameterSet::new();
        let stem = ConvLayer::build(&mut p, "stem", spec.in_channels, spec.channels(0), 3, 1, false, rng);
        let downs = (1..=spec.depth)
            .map(|l| {
                ConvLayer::build(
                    &mut p,
                    &format!("down{l}"),
                    spec.channels(l - 1),
                    spec.channels(l),
                    3,
                    2,
                    false,
                    rng,
                )
            })
            .collect();
        let cb = spec.channels(spec.depth);
        let mut blocks = Vec::with_capacity(spec.residual_blocks);
        for i in 0..spec.residual_blocks {
            let conv1 = ConvLayer::build(&mut p, &format!("res{i}.conv1"), cb, cb, 3, 1, false, rng);
            let conv2 = ConvLayer::build(&mut p, &format!("res{i}.conv2"), cb, cb, 3, 1, false, rng);
            let eca = if spec.eca_enabled {
                Some(EcaLayer::build(&mut p, &format!("res{i}.eca"), cb, spec.eca_gamma, spec.eca_beta)?)
            } else {
                None
            };
            blocks.push(ResBlock { conv1, conv2, eca });
        }
        let ups = (1..=spec.depth)
            .rev()
            .map(|l| {
                ConvLayer::build(
                    &mut p,
                    &format!("up{l}"),
                    spec.channels(l) + spec.channels(l - 1),
                    spec.channels(l - 1),
                    3,
                    1,
                    false,
                    rng,
                )
            })
            .collect();
        let head = ConvLayer::build(&mut p, "head", spec.channels(0), spec.in_channels, 3, 1, true, rng);
        Ok(Self {
            spec,
            params: p,
            stem,
            downs,
            blocks,
            ups,
            head,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Forward pass with every attention gate replaced by 1.
    pub fn forward_unit_gate(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        self.run(tape, p, x, true)
    }

    fn run(&self, tape: &mut Tape<T>, p: &[Var], x: Var, unit_gate: bool) -> Var {
        let slope = T::of(LEAKY_SLOPE);
        let s = self.stem.forward(tape, p, x);
        let mut h = tape.leaky_relu(s, slope);
        let mut skips = Vec::with_capacity(self.downs.len());
        for d in &self.downs {
            skips.push(h);
            let z = d.forward(tape, p, h);
            h = tape.leaky_relu(z, slope);
        }
        for b in &self.blocks {
            let z = b.conv1.forward(tape, p, h);
            let a = tape.leaky_relu(z, slope);
            let mut r = b.conv2.forward(tape, p, a);
            if let (Some(e), false) = (&b.eca, unit_gate) {
                r = e.forward(tape, p, r);
            }
            h = tape.add(h, r);
        }
        for (u, skip) in self.ups.iter().zip(skips.into_iter().rev()) {
            let up = tape.upsample2(h);
            let cat = tape.concat_channels(up, skip);
            let z = u.forward(tape, p, cat);
            h = tape.leaky_relu(z, slope);
        }
        let delta = self.head.forward(tape, p, h);
        let base = tape.logit(x, T::of(LOGIT_EPS));
        let z = tape.add(base, delta);
        tape.sigmoid(z)
    }
}

impl<T: Scalar> Generator<T> for UNetGenerator<T> {
    fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let m = 1usize << self.spec.depth;
        match shape {
            [n, c, h, w] if *n > 0 && *c == self.spec.in_channels && *h > 0 && *w > 0 => {
                if h % m != 0 || w % m != 0 {
                    Err(Error::ShapeMismatch(format!(
                        "input {h}x{w} is not divisible by 2^depth = {m}"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Err(Error::ShapeMismatch(format!(
                "generator expects [N, {}, H, W], got {shape:?}",
                self.spec.in_channels
            ))),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        self.run(tape, p, x, false)
    }
}
