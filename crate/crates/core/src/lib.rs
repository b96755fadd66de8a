//! Inflated 3D convolution-transformer video classifier.
//!
//! A self-contained training and inference stack: a reverse-mode autodiff
//! tensor substrate with an operation counter, a partially-temporal 3D CNN
//! encoder, a factorized space/time transformer encoder with two
//! cross-dimensional fusion mechanisms, CNN-transformer feature coupling,
//! 2D-to-3D weight inflation with a plain-file checkpoint container, and a
//! synthetic-video harness (data generator, Adam training loop, metrics).

pub mod checkpoint;
pub mod config;
pub mod counter;
pub mod data;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod inflate;
pub mod metrics;
pub mod model;
pub mod modelfile;
mod ops;
pub mod plan;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use counter::OpCounter;
pub use element::Element;
pub use error::{Error, Result};
pub use ops::norm::BnUpdate;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
