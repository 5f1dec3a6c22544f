use super::params::ParameterSet;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Channel-attention kernel size: the odd integer nearest to
/// `|log2(C) / gamma + beta / gamma|`, at least 1. Ties round up.
pub fn eca_kernel_size(channels: usize, gamma: f64, beta: f64) -> usize {
    let t = ((channels.max(1) as f64).log2() / gamma + beta / gamma).abs();
    let k = 2.0 * ((t - 1.0) / 2.0 + 0.5).floor() + 1.0;
    if k.is_finite() && k >= 1.0 {
        k as usize
    } else {
        1
    }
}

/// Efficient channel attention: global average pooling, a 1-D convolution
/// across channels, a logistic gate and channelwise rescaling.
#[derive(Clone, Debug, PartialEq)]
pub struct EcaGate<T> {
    pub kernel: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> EcaGate<T> {
    /// Gate for `channels` channels with an averaging kernel and zero bias.
    pub fn new(channels: usize, gamma: f64, beta: f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("eca gate needs at least one channel".into()));
        }
        if !(gamma.is_finite() && gamma != 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eca gamma {gamma} / beta {beta} must be finite with gamma != 0"
            )));
        }
        let k = eca_kernel_size(channels, gamma, beta);
        Ok(Self {
            kernel: vec![T::one() / T::of(k as f64); k],
            bias: T::zero(),
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.len()
    }

    /// Applies the gate to a `C×H×W` or `N×C×H×W` feature map.
    pub fn apply(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = features.shape().to_vec();
        let nchw = match shape.len() {
            3 => vec![1, shape[0], shape[1], shape[2]],
            4 => shape.clone(),
            _ => return Err(Error::ShapeMismatch(format!("eca input {shape:?}"))),
        };
        let mut tape = Tape::new();
        let x = tape.constant(features.clone().reshaped(&nchw)?);
        let w = tape.constant(Tensor::new(vec![self.kernel.len()], self.kernel.clone())?);
        let b = tape.constant(Tensor::scalar(self.bias).reshaped(&[1])?);
        let y = gate(&mut tape, x, w, b);
        tape.value(y).clone().reshaped(&shape)
    }
}

pub(crate) fn gate<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Var {
    let pooled = tape.mean_hw(x);
    let logits = tape.channel_conv1d(pooled, w, b);
    let g = tape.sigmoid(logits);
    tape.mul_channel(x, g)
}

/// Indices of a gate's kernel and bias inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct EcaLayer {
    pub w: usize,
    pub b: usize,
}

impl EcaLayer {
    pub fn build<T: Scalar>(
        params: &mut ParameterSet<T>,
        name: &str,
        channels: usize,
        gamma: f64,
        beta: f64,
    ) -> Result<Self> {
        let g = EcaGate::<T>::new(channels, gamma, beta)?;
        let k = g.kernel.len();
        let w = params.push(format!("{name}.kernel"), Tensor::new(vec![k], g.kernel)?);
        let b = params.push(format!("{name}.bias"), Tensor::zeros(&[1]));
        Ok(Self { w, b })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        gate(tape, x, p[self.w], p[self.b])
    }
}
