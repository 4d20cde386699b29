//! Prognosis of pulmonary fibrosis progression from CT slices and clinical
//! records.
//!
//! The pipeline: lung masks by region growing ([`lung_mask`]), least-squares
//! FVC decline targets ([`slope`]), a context-gated hybrid CNN / vision
//! transformer with an attentive clinical encoder ([`model`]) trained with
//! k-fold cross-validation ([`training`]), and RMSE / Laplace log-likelihood
//! scoring ([`metrics`]).

pub mod cli;
pub mod dataset;
pub mod error;
pub mod image;
pub mod lung_mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod run;
pub mod slope;
pub mod training;

pub use error::{Error, Result};
