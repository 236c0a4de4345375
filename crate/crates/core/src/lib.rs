//! OCSVM-guided autoencoders for unsupervised anomaly detection.
//!
//! The crate bundles a small reverse-mode autodiff engine, an exact one-class
//! SVM dual solver with implicit gradients, the guided training loss, the
//! reference autoencoders, data loaders and corruption generators, and the
//! evaluation metrics used to compare methods.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod guidance;
pub mod hash;
pub mod kernel;
pub mod metrics;
mod linalg;
pub mod models;
pub mod ocsvm;
pub mod pipeline;

pub use error::{Error, Result};
