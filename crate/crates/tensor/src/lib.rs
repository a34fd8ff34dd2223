//! Reverse-mode automatic differentiation over small f64 tensors.
//!
//! Provides exactly the kernels needed by convolutional encoders and
//! point-wise MLP decoders: linear layers, 2D/3D convolution, pooling,
//! upsampling, concatenation, softmax cross-entropy, L1 and multilinear
//! grid sampling. Everything runs single-threaded in a fixed order, so
//! identical inputs give bit-identical results.

pub mod checkpoint;
pub mod gradcheck;
mod error;
pub mod init;
pub mod ops;
pub mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, ParamEntry};
pub use error::{Result, TensorError};
pub use optim::{step_decay, zero_grad, Sgd};
pub use tensor::{no_grad, NoGradGuard, Tensor};
