//! Minimal reverse-mode autodiff used by the networks and the transport
//! objective.
//!
//! Every differentiable quantity in the crate (generator, critic, MS-SSIM
//! transport cost, classifier losses) is recorded on a [`Tape`]. Gradients
//! with respect to inputs come from the same machinery as gradients with
//! respect to parameters.

mod conv;
mod tape;
mod tensor;

pub use conv::ConvGeom;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
