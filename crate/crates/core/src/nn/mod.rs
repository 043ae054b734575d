//! A small CNN engine: convolution, ReLU, fully connected, dropout,
//! softmax and regression outputs, trained with plain mini-batch SGD.

pub mod io;
pub mod layers;
pub mod loss;
pub mod model;
pub mod spec;
pub mod tensor;
pub mod train;

/// Scalar type of activations and parameters.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model};
pub use model::{argmax, ClassPrediction, Examples, Gradients, LayerParams, Model, Targets, TrainingMeta};
pub use spec::{LayerSpec, NetworkSpec, Padding, Shape};
pub use tensor::Tensor4;
pub use train::{train, EpochStats, TrainConfig};
