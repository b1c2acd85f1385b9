//! `codelnet`: a from-scratch CNN engine and reproducible training pipeline
//! for binary classification of two-channel (T1C + T2) 2D tumor slices.
//!
//! Layers:
//!
//! - [`tensor`]: dense tensors, layer primitives with hand-written backward
//!   passes, finite-difference gradient checks.
//! - [`network`]: the multi-branch CNN, its builder and weight files.
//! - [`optim`]: SGD, RMSprop, AdaDelta and Adam, the halving learning-rate
//!   schedule, early stopping and the epoch loop.
//! - [`data`]: manifests, tensor files, splits and balanced sampling.
//! - [`preprocess`]: z-scoring, mask dilation, canvas embedding and augmentation.
//! - [`metrics`]: confusion matrix, sensitivity, specificity, accuracy.
//! - [`phantom`]: synthetic two-class dataset generator.
//! - [`pipeline`] and [`config`]: the glue behind the `codelnet` binary.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{build_network, Network, NetworkConfig};
pub use tensor::{Dim2, Parameter, Tensor};
