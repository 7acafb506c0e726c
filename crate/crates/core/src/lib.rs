//! Local principal component analysis for nonlinear factor models.
//!
//! A `p × n` panel (features × units) is modeled as `x_il = η_l(α_i) + u_il`
//! with unobserved latent `α_i` and smooth unknown `η_l`. The estimator
//! matches each unit to its `K` nearest neighbors on one block of rows and
//! fits a low-rank factor model to the neighborhood on a disjoint block.
//! The fitted neighborhood means estimate `η_l(α_i)` entrywise.
//!
//! Besides the core estimator the crate provides a covariate-adjusted
//! variant, single-unit counterfactual prediction, a global PCA baseline
//! and a Monte Carlo harness.

pub mod covadjust;
pub mod data;
pub mod distance;
pub mod error;
pub mod fmt;
pub mod gpca;
pub mod linalg;
pub mod localpca;
pub mod matching;
pub mod pipeline;
pub mod sim;
pub mod synth;

pub use data::{CsvOptions, DataMatrix, RowSplit, SplitMode};
pub use distance::DistanceKind;
pub use error::{ErrorClass, LpcaError, Result};
pub use localpca::{FactorCountRule, LocalFactorModel, Threshold};
pub use matching::NeighborSet;
pub use pipeline::{fit_lpca, KChoice, LpcaFit, LpcaSettings};
