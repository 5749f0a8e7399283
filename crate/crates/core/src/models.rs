//! Black-box model wrapper and the built-in test functions.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::LinearModel;
use crate::gaussian::{CovMatrix, GaussianSpec};

type ModelFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Deterministic scalar model on `arity`-vectors, counting its evaluations.
///
/// The wrapped closure must be `Send + Sync`; evaluations may run on several
/// threads at once and the counter is atomic.
pub struct BlackBoxModel {
    arity: usize,
    func: Arc<ModelFn>,
    evals: AtomicU64,
}

impl BlackBoxModel {
    pub fn new(arity: usize, func: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { arity, func: Arc::new(func), evals: AtomicU64::new(0) }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Evaluates the model, failing on non-finite output.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        debug_assert_eq!(x.len(), self.arity);
        self.evals.fetch_add(1, Ordering::Relaxed);
        let y = (self.func)(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFiniteEvaluation(x.to_vec()))
        }
    }

    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }
}

impl Clone for BlackBoxModel {
    /// Shares the function; the clone starts with a fresh counter.
    fn clone(&self) -> Self {
        Self { arity: self.arity, func: Arc::clone(&self.func), evals: AtomicU64::new(0) }
    }
}

impl fmt::Debug for BlackBoxModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackBoxModel")
            .field("arity", &self.arity)
            .field("eval_count", &self.eval_count())
            .finish_non_exhaustive()
    }
}

/// Registry of named models with closed-form gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinModel {
    /// `cos(x₁)x₂ + sin(x₂) + 2cos(x₃)x₁ − sin(x₄)`
    Fig1,
    /// `x₁ + x₂²`
    Remark1,
    /// `‖x‖²` in the given dimension
    Sqnorm {
        dim: usize,
    },
    Linear(LinearModel),
}

impl BuiltinModel {
    pub fn arity(&self) -> usize {
        match self {
            BuiltinModel::Fig1 => 4,
            BuiltinModel::Remark1 => 2,
            BuiltinModel::Sqnorm { dim } => *dim,
            BuiltinModel::Linear(m) => m.dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinModel::Fig1 => "fig1",
            BuiltinModel::Remark1 => "remark1",
            BuiltinModel::Sqnorm { .. } => "sqnorm",
            BuiltinModel::Linear(_) => "linear",
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            BuiltinModel::Fig1 => x[0].cos() * x[1] + x[1].sin() + 2.0 * x[2].cos() * x[0] - x[3].sin(),
            BuiltinModel::Remark1 => x[0] + x[1] * x[1],
            BuiltinModel::Sqnorm { .. } => x.iter().map(|v| v * v).sum(),
            BuiltinModel::Linear(m) => m.eval(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            BuiltinModel::Fig1 => vec![
                -x[0].sin() * x[1] + 2.0 * x[2].cos(),
                x[0].cos() + x[1].cos(),
                -2.0 * x[2].sin() * x[0],
                -x[3].cos(),
            ],
            BuiltinModel::Remark1 => vec![1.0, 2.0 * x[1]],
            BuiltinModel::Sqnorm { .. } => x.iter().map(|v| 2.0 * v).collect(),
            BuiltinModel::Linear(m) => m.coeffs.clone(),
        }
    }

    pub fn black_box(&self) -> BlackBoxModel {
        let me = self.clone();
        BlackBoxModel::new(self.arity(), move |x| me.eval(x))
    }
}

/// Mixing matrix `A` of the four-variable experiment; its covariance is `AᵀA`.
pub const FIG1_A: [[f64; 4]; 4] =
    [[-2.0, -1.0, 0.0, 1.0], [2.0, -2.0, -1.0, 0.0], [1.0, 2.0, -2.0, -1.0], [0.0, 1.0, 2.0, -2.0]];

pub const FIG1_MEAN: [f64; 4] = [1.0, 0.0, 2.0, 1.0];

/// `Σ = AᵀA`.
pub fn fig1_base_cov() -> CovMatrix {
    let a = DMatrix::from_fn(4, 4, |i, j| FIG1_A[i][j]);
    CovMatrix::new(a.transpose() * a).expect("AᵀA is positive definite")
}

/// Input law at index `n`: mean `μ + (1/n)(1,1,1,1)` and covariance `Σ/n²`.
pub fn fig1_input(n: u32) -> GaussianSpec {
    let n = f64::from(n);
    let mean: Vec<f64> = FIG1_MEAN.iter().map(|m| m + 1.0 / n).collect();
    let cov = fig1_base_cov().scaled(1.0 / (n * n)).expect("positive scale");
    GaussianSpec::from_parts(&mean, cov).expect("matching dimensions")
}

/// `N(0, I₂/a)`.
pub fn remark1_input(a: f64) -> Result<GaussianSpec> {
    GaussianSpec::from_parts(&[0.0, 0.0], CovMatrix::identity(2).scaled(1.0 / a)?)
}

/// Shapley effects of `x₁ + x₂²` under `N(0, I₂/a)`: `(a/(a+2), 2/(a+2))`.
pub fn remark1_shapley(a: f64) -> [f64; 2] {
    [a / (a + 2.0), 2.0 / (a + 2.0)]
}
