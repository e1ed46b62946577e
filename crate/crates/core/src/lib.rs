//! Dynamic time warping, soft-DTW, and residual networks that learn warping
//! distances and classify time series with hard parameter sharing.

pub mod error;
pub mod gradcheck;
pub mod analysis;
pub mod cli;
pub mod datasets;
pub mod models;
pub mod tensor;
pub mod training;
pub mod warping;

pub use error::{Error, ErrorKind, Result};
