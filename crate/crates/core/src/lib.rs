//! Shapley effects of Gaussian inputs through linear surrogates of nonlinear
//! models, with Monte-Carlo reference estimators and experiment runners.
//!
//! ```
//! use shapley_gla::{shapley_linear, CovMatrix, LinearModel};
//!
//! let cov = CovMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
//! let eta = shapley_linear(&LinearModel::new(0.0, vec![1.0, 1.0]), &cov).unwrap();
//! assert!((eta.values[0] - 0.5).abs() < 1e-12);
//! ```

// NaN must fail positivity checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod empirical;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod gaussian;
pub mod linearize;
pub mod mc;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
pub use exact::{shapley_linear, shapley_linear_blockwise, LinearModel, ShapleyVector};
pub use experiment::{ExperimentConfig, ExperimentKind, Method, ResultRow, ResultTable};
pub use gaussian::{CovMatrix, GaussianSpec, SampleBatch, SubsetMask};
pub use mc::{OracleParams, PermEstimatorParams};
pub use models::{BlackBoxModel, BuiltinModel};
pub use rng::Stream;
