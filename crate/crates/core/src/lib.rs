//! Lightweight U-Net segmentation toolkit.
//!
//! Everything needed to build, count, train and evaluate the depth-extended,
//! filter-reduced, separable and residual U-Net variants on CPU:
//!
//! - [`tensor`] / [`autograd`]: dense `f64` tensors and a define-by-run tape.
//! - [`nn`]: convolution (standard, depthwise, pointwise, transposed),
//!   pooling, activations and the residual block.
//! - [`unet`]: configuration, builder, closed-form parameter accounting and
//!   the named variant ladder.
//! - [`metrics`]: DICE, soft-DICE and BCE losses, thresholding.
//! - [`data`]: synthetic mammography phantoms, PNG/PGM IO, resizing,
//!   patches, dataset manifests.
//! - [`train`]: optimizers, training loop, evaluation, checkpoints.

pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod unet;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
