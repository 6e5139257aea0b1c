//! Multivariate extended generalized Pareto distribution (meGPD) toolkit.
//!
//! The model represents a nonnegative bivariate vector through a radial-angular
//! construction: a heavy-tailed radius `R` following a univariate extended
//! generalized Pareto distribution, two symmetric-Beta angular vectors `L` and
//! `U` on the unit simplex governing the lower- and upper-tail dependence, and
//! a smooth weight function that shifts influence from `L` to `U` as the radius
//! grows:
//!
//! ```text
//! Y = R * [ (1 - w) L + w U ],     w = omega(F_R(R))
//! ```
//!
//! The crate provides:
//!
//! - [`egpd`]: the univariate eGPD (CDF, PDF, quantile, maximum likelihood);
//! - [`model`]: exact simulation of the bivariate model with latent access;
//! - [`moments`]: Monte Carlo moments/covariances with a decomposition route;
//! - [`hybrid`]: the staged likelihood + simulated method-of-moments estimator;
//! - [`nbe`]: an amortized neural point estimator on a DeepSets architecture,
//!   trained on simulated data with hand-derived gradients;
//! - [`diagnostics`]: tail-dependence chi curves, model-vs-data QQ data,
//!   bootstrap envelopes, and recovery metrics;
//! - [`station`]: daily precipitation ingestion and pairwise preprocessing.
//!
//! Scalar-agnostic pieces (distribution functions, special functions, the
//! optimizers and the neural network) are generic over [`scalar::Real`]
//! (`f32`/`f64`). The sampling engine and the data pipeline are `f64`; the
//! aliases below fix the concrete scalar used throughout the pipeline.

pub mod dataset;
pub mod diagnostics;
pub mod egpd;
pub mod error;
pub mod hybrid;
pub mod model;
pub mod moments;
pub mod nbe;
pub mod optim;
pub mod scalar;
pub mod special;
pub mod station;
pub mod stats;
pub mod streams;

pub use error::{Error, Result};
pub use scalar::Real;

use serde::{Deserialize, Serialize};

/// Which distributional tail a statistic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Lower,
    Upper,
}

/// Concrete scalar used by the simulation and fitting pipeline.
pub type EgpdParams64 = egpd::EgpdParams<f64>;
pub type MegpdParams64 = model::MegpdParams<f64>;
pub type Dataset64 = dataset::Dataset<f64>;
pub type NbeModel64 = nbe::NbeModel<f64>;

