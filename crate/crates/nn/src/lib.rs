//! Tensor/backprop engine behind the radiation surrogates: dense, "same"
//! convolution, average pooling and ELU layers, Adam with an L2 kernel
//! penalty, and the MLP/CNN builders.
//!
//! Everything runs single-threaded with fixed reduction order, so a fixed
//! seed reproduces trained weights bit for bit.

pub mod error;
pub mod layers;
pub mod model_file;
pub mod network;
pub mod optim;
pub mod scalar;
pub mod tensor_file;
pub mod train;

pub use error::{NnError, Result};
pub use layers::ImageShape;
pub use model_file::{TrainedModel, TrainingMetadata};
pub use network::{build, build_cnn, build_mlp, Architecture, InputShape, Network, NetworkSpec};
pub use scalar::Scalar;
pub use tensor_file::Tensor;
pub use train::{predict_timed, train, Control, EpochRecord, Samples, TrainConfig};
