//! Dual-path dynamic-filter super-resolution.
//!
//! A kernel-predicting encoder/decoder produces per-pixel kernels of several
//! sizes; those kernels filter a residually corrected copy of the input and
//! the results are summed and refined. Everything runs on a small CPU tensor
//! library with reverse-mode gradients.

pub mod commands;
pub mod config;
pub mod data;
pub mod dynfilter;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{GradTape, Var};
pub use tensor::{Scalar, Tensor};
