//! Small building blocks shared by the generator, critic and classifiers.

use rand::Rng;

use super::params::{he_normal, ParameterSet};
use crate::autodiff::{Tape, Tensor, Var};
use crate::scalar::Scalar;

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

/// Indices of a convolution's weight and bias inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvLayer {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParameterSet<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        zero_init: bool,
        rng: &mut R,
    ) -> Self {
        let shape = [c_out, c_in, kernel, kernel];
        let weight = if zero_init {
            Tensor::zeros(&shape)
        } else {
            he_normal(rng, &shape, c_in * kernel * kernel)
        };
        let w = params.push(format!("{name}.weight"), weight);
        let b = params.push(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Self {
            w,
            b,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        tape.conv2d(x, p[self.w], Some(p[self.b]), self.stride, self.pad)
    }

    /// Linear part only, for tangent propagation.
    pub fn forward_linear<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        tape.conv2d(x, p[self.w], None, self.stride, self.pad)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DenseLayer {
    pub w: usize,
    pub b: usize,
}

impl DenseLayer {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParameterSet<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        zero_init: bool,
        rng: &mut R,
    ) -> Self {
        let weight = if zero_init {
            Tensor::zeros(&[d_out, d_in])
        } else {
            he_normal(rng, &[d_out, d_in], d_in)
        };
        let w = params.push(format!("{name}.weight"), weight);
        let b = params.push(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        tape.linear(x, p[self.w], Some(p[self.b]))
    }

    pub fn forward_linear<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Var {
        tape.linear(x, p[self.w], None)
    }
}

/// Leaky-ReLU derivative mask of a pre-activation, as a constant array.
pub(crate) fn leaky_mask<T: Scalar>(tape: &Tape<T>, pre: Var) -> Vec<T> {
    let slope = T::of(LEAKY_SLOPE);
    tape.value(pre)
        .data()
        .iter()
        .map(|&v| if v > T::zero() { T::one() } else { slope })
        .collect()
}
