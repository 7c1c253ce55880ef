//! Variance-component and covariance-function estimation for spatial
//! phenotypes measured on twin cohorts.
//!
//! The library decomposes phenotypic variation measured at many vertices of
//! a cortical (or otherwise spherical) domain into additive-genetic,
//! common-environmental, and unique-environmental parts. It provides:
//!
//! * per-vertex and kernel-weighted variance-component likelihood fits,
//! * kernel smoothing with generalized cross-validation,
//! * closed-form smoothed covariance-function estimators,
//! * a positive-semidefinite low-rank covariance estimator fitted by
//!   projected gradient descent in factor space,
//! * covariance interpolation to unobserved locations and a partitioned
//!   fitting mode for large vertex sets,
//! * a simulation harness and evaluation metrics for method comparison.

pub mod cohort;
pub mod covariance;
pub mod covfun;
pub mod domain;
pub mod eigenutil;
pub mod error;
pub mod estimators;
pub mod harmonics;
pub mod simulate;
pub mod kernel;
pub mod mat1;
pub mod metrics;
pub mod optim;
pub mod pointwise;
pub mod psd;
pub mod smoothing;
pub mod sparse;
#[cfg(test)]
pub(crate) mod testutil;

pub use cohort::{FamilyIndex, FamilyKind, TwinCohort};
pub use domain::{Hemisphere, VertexSet};
pub use error::{Diagnostic, Error, Result, Severity};
pub use kernel::{biweight, KernelBank, KernelOperator};
pub use pointwise::ComponentFields;
pub use sparse::Csr;
