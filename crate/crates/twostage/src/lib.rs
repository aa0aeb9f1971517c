//! Bayesian inference for two-stage randomized experiments with
//! interference and noncompliance.
//!
//! Clusters are first randomized to an assignment mechanism (treatment
//! saturation), then units within each cluster are completely randomized at
//! that saturation. Units may not comply with their assignment; compliance
//! behavior across the two mechanisms defines six latent principal strata.
//! The library fits a zero-inflated outcome model by Gibbs sampling over the
//! latent strata and the missing potential outcomes, and evaluates
//! finite-population direct, spillover, overall, and complier-average
//! effects on every retained draw.

pub mod config;
pub mod dataset;
pub mod design;
pub mod error;
pub mod estimands;
pub mod fit;
pub mod gibbs;
pub mod outcome;
pub mod sim;
pub mod stats;
pub mod strata;

pub use error::{Error, Result};
