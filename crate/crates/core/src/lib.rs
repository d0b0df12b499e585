//! Bag-of-local-features networks (BagNets) built on a small reverse-mode
//! autodiff engine, with training, checkpointing and an interpretability
//! toolkit: evidence heatmaps, patch mining, interaction and masking
//! experiments, attribution baselines and logit thresholding.

pub mod arch;
pub mod data;
pub mod error;
mod gemm;
pub mod interpret;
pub mod optim;
pub mod parallel;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use tensor::{Scalar, Tensor};
