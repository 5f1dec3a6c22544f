//! Unpaired fundus image enhancement with an optimal-transport objective.
//!
//! The modules are generic over [`Scalar`]; the aliases below fix `f32`, the
//! precision used for training and inference.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod pairing;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image = imaging::ImageTensor<f32>;
pub type Tensor = autodiff::Tensor<f32>;
pub type Enhancer = nn::UNetGenerator<f32>;
pub type ImageCritic = nn::ConvCritic<f32>;
pub type Classifier = nn::ConvClassifier<f32>;
pub type Checkpoint = nn::Container<f32>;
pub type Trainer = train::ImageTrainer<f32>;
pub type Source = train::ImageSource<f32>;
