//! Off-line, text-independent writer identification with a multi-stream
//! convolutional network.
//!
//! The engine is organized bottom-up: [`tensor`] provides the dense value
//! type everything else moves around, [`layers`] the forward/backward passes,
//! [`optim`] SGD with momentum and the step schedule, [`model`] the
//! single-stream and two-stream network builders, [`patching`] the
//! scan/sample/crop input pipeline, [`data`] manifests, image IO, the
//! synthetic corpus generator and checkpointing, and [`pipeline`] the
//! end-to-end train/finetune/evaluate/identify procedures.

pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod optim;
pub mod patching;
pub mod pipeline;
pub mod tensor;

pub use error::{DwError, Result};
pub use tensor::Tensor;
