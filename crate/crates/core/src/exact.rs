//! Exact Shapley effects for affine models of Gaussian inputs.
//!
//! For `Y = β₀ + βᵀX` with `X ~ N(μ, Σ)`, the conditional variance given a
//! subset `u` does not depend on the conditioning value:
//!
//! ```text
//! V(Y | X_u) = βᵀΣβ − cᵤᵀ Σ_{u,u}⁻¹ cᵤ,   c = Σβ
//! ```
//!
//! which equals the Schur-complement form `β_{-u}ᵀ (Σ_{-u,-u} − Σ_{-u,u}Σ_{u,u}⁻¹Σ_{u,-u}) β_{-u}`.
//! Tabulating it over all `2^p` subsets and applying the Shapley weights gives
//! the effects in `O(p·2^p)` after the per-subset solves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{CovMatrix, SubsetMask, MAX_DIM};

/// Default relative coupling threshold for [`block_decompose`].
pub const DEFAULT_BLOCK_TOL: f64 = 1e-12;

/// Tolerance for the exact-path invariants of [`ShapleyVector`].
pub const EXACT_TOL: f64 = 1e-10;

/// Affine model `x ↦ intercept + coeffsᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coeffs: Vec<f64>,
}

impl LinearModel {
    pub fn new(intercept: f64, coeffs: Vec<f64>) -> Self {
        Self { intercept, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coeffs.iter().zip(x).map(|(b, x)| b * x).sum::<f64>()
    }

    /// `βᵀΣβ`.
    pub fn output_variance(&self, cov: &CovMatrix) -> Result<f64> {
        self.check_dim(cov)?;
        let s = cov.matrix();
        let b = &self.coeffs;
        let mut v = 0.0;
        for i in 0..b.len() {
            for j in 0..b.len() {
                v += b[i] * s[(i, j)] * b[j];
            }
        }
        Ok(v)
    }

    fn check_dim(&self, cov: &CovMatrix) -> Result<()> {
        if self.dim() != cov.dim() {
            return Err(Error::DimensionMismatch { expected: cov.dim(), actual: self.dim() });
        }
        Ok(())
    }
}

/// One sensitivity index per input, with optional standard errors for
/// Monte-Carlo estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyVector {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    /// Exact-path result: entries in `[0, 1]` and summing to one within [`EXACT_TOL`].
    pub exact: bool,
}

impl ShapleyVector {
    pub fn exact(values: Vec<f64>) -> Self {
        Self { values, std_errors: None, exact: true }
    }

    pub fn estimate(values: Vec<f64>, std_errors: Option<Vec<f64>>) -> Self {
        Self { values, std_errors, exact: false }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Hard invariants for exact results, soft (sum within 0.1) for estimates.
    pub fn satisfies_invariants(&self) -> bool {
        if self.exact {
            (self.sum() - 1.0).abs() <= EXACT_TOL
                && self.values.iter().all(|&v| (-EXACT_TOL..=1.0 + EXACT_TOL).contains(&v))
        } else {
            (self.sum() - 1.0).abs() <= 0.1
        }
    }
}

/// `V(Y | X_u)` for every subset `u`, indexed by mask bits.
#[derive(Debug, Clone, PartialEq)]
pub struct CondVarTable {
    p: usize,
    entries: Vec<f64>,
}

impl CondVarTable {
    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn get(&self, u: SubsetMask) -> f64 {
        self.entries[u.bits() as usize]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn total_variance(&self) -> f64 {
        self.entries[0]
    }

    /// Closed Sobol indices `1 − V(Y|X_u)/V(Y)`.
    pub fn closed_sobol(&self) -> Vec<f64> {
        let v = self.total_variance();
        self.entries.iter().map(|e| 1.0 - e / v).collect()
    }
}

/// Reciprocal binomial weights `1 / C(p−1, k)` for `k = 0..p`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinomialWeights {
    inv: Vec<f64>,
}

impl BinomialWeights {
    pub fn new(p: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&p));
        // C(24, k) < 2^32, so the integer recurrence is exact.
        let n = (p - 1) as u64;
        let mut c: u64 = 1;
        let mut inv = Vec::with_capacity(p);
        for k in 0..p as u64 {
            inv.push(1.0 / c as f64);
            c = c * (n - k) / (k + 1);
        }
        Self { inv }
    }

    /// Copy with the weight for subset size `k` replaced by its reciprocal.
    /// Only for exercising the acceptance suite's fault detection.
    #[doc(hidden)]
    pub fn with_flipped(mut self, k: usize) -> Self {
        self.inv[k] = 1.0 / self.inv[k];
        self
    }

    pub fn get(&self, k: usize) -> f64 {
        self.inv[k]
    }
}

/// Shapley aggregation over a table of closed Sobol indices `S_u` (indexed by mask):
/// `η_i = (1/p) Σ_{u ⊆ −i} C(p−1,|u|)⁻¹ (S_{u∪i} − S_u)`.
pub fn shapley_from_closed_sobol(p: usize, closed: &[f64], weights: &BinomialWeights) -> Vec<f64> {
    assert_eq!(closed.len(), 1usize << p);
    let mut eta = vec![0.0; p];
    // the full set has no variable left to add
    for mask in 0..closed.len() - 1 {
        let u = SubsetMask(mask as u32);
        let w = weights.get(u.len());
        for (i, e) in eta.iter_mut().enumerate() {
            if !u.contains(i) {
                *e += w * (closed[u.with(i).bits() as usize] - closed[mask]);
            }
        }
    }
    eta.iter_mut().for_each(|e| *e /= p as f64);
    eta
}

/// `V(E(Y|X_u))` via `cᵤᵀ Σ_{u,u}⁻¹ cᵤ` using a Cholesky factor of `Σ_{u,u}`.
fn explained_variance(sigma: &nalgebra::DMatrix<f64>, c: &[f64], idx: &[usize]) -> Result<f64> {
    let k = idx.len();
    let mut l = vec![0.0; k * k];
    for j in 0..k {
        let mut pivot = sigma[(idx[j], idx[j])];
        for m in 0..j {
            pivot -= l[j * k + m] * l[j * k + m];
        }
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: idx[j], value: pivot, tol: 0.0 });
        }
        let d = pivot.sqrt();
        l[j * k + j] = d;
        for i in (j + 1)..k {
            let mut s = sigma[(idx[i], idx[j])];
            for m in 0..j {
                s -= l[i * k + m] * l[j * k + m];
            }
            l[i * k + j] = s / d;
        }
    }
    // forward solve L y = c_u; result is ‖y‖²
    let mut y = vec![0.0; k];
    let mut acc = 0.0;
    for i in 0..k {
        let mut s = c[idx[i]];
        for m in 0..i {
            s -= l[i * k + m] * y[m];
        }
        y[i] = s / l[i * k + i];
        acc += y[i] * y[i];
    }
    Ok(acc)
}

fn cov_times_coeffs(model: &LinearModel, cov: &CovMatrix) -> Vec<f64> {
    let s = cov.matrix();
    (0..model.dim()).map(|i| (0..model.dim()).map(|j| s[(i, j)] * model.coeffs[j]).sum()).collect()
}

fn cond_var_with(model: &LinearModel, cov: &CovMatrix, c: &[f64], total: f64, u: SubsetMask) -> Result<f64> {
    let p = model.dim();
    if u.is_empty() {
        return Ok(total);
    }
    if u.is_full(p) {
        return Ok(0.0);
    }
    let explained = explained_variance(cov.matrix(), c, &u.indices())?;
    Ok((total - explained).max(0.0))
}

/// `V(Y | X_u)` for an affine model of Gaussian inputs. `u = ∅` gives `βᵀΣβ`, full `u` gives 0.
pub fn conditional_variance_linear(model: &LinearModel, cov: &CovMatrix, u: SubsetMask) -> Result<f64> {
    model.check_dim(cov)?;
    u.check(model.dim())?;
    let total = model.output_variance(cov)?;
    let c = cov_times_coeffs(model, cov);
    cond_var_with(model, cov, &c, total, u)
}

fn check_table_dim(p: usize) -> Result<()> {
    if p > MAX_DIM {
        return Err(Error::DimensionTooLarge {
            p,
            max: MAX_DIM,
            hint: "split the covariance into independent blocks and use the blockwise path",
        });
    }
    Ok(())
}

/// All `2^p` conditional variances.
pub fn build_cond_var_table(model: &LinearModel, cov: &CovMatrix) -> Result<CondVarTable> {
    model.check_dim(cov)?;
    let p = model.dim();
    check_table_dim(p)?;
    let total = model.output_variance(cov)?;
    let c = cov_times_coeffs(model, cov);
    let entries = (0..1u32 << p)
        .into_par_iter()
        .map(|bits| cond_var_with(model, cov, &c, total, SubsetMask(bits)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CondVarTable { p, entries })
}

fn zero_variance_tol(model: &LinearModel, cov: &CovMatrix) -> f64 {
    let b2: f64 = model.coeffs.iter().map(|b| b * b).sum();
    let dmax = cov.variances().into_iter().fold(0.0, f64::max);
    model.dim() as f64 * f64::EPSILON * b2 * dmax
}

/// Shapley effects of `Y = β₀ + βᵀX`, `X ~ N(μ, Σ)`.
pub fn shapley_linear(model: &LinearModel, cov: &CovMatrix) -> Result<ShapleyVector> {
    shapley_linear_weighted(model, cov, &BinomialWeights::new(model.dim().clamp(1, MAX_DIM)))
}

/// [`shapley_linear`] with explicit aggregation weights.
pub fn shapley_linear_weighted(
    model: &LinearModel,
    cov: &CovMatrix,
    weights: &BinomialWeights,
) -> Result<ShapleyVector> {
    model.check_dim(cov)?;
    check_table_dim(model.dim())?;
    let total = model.output_variance(cov)?;
    if !(total > zero_variance_tol(model, cov)) {
        return Err(Error::ZeroVarianceModel(total));
    }
    let table = build_cond_var_table(model, cov)?;
    let closed = table.closed_sobol();
    Ok(ShapleyVector::exact(shapley_from_closed_sobol(model.dim(), &closed, weights)))
}

/// Closed Sobol index `V(E(Y|X_u)) / V(Y) = 1 − V(Y|X_u)/V(Y)`.
pub fn closed_sobol_linear(model: &LinearModel, cov: &CovMatrix, u: SubsetMask) -> Result<f64> {
    let total = model.output_variance(cov)?;
    if !(total > zero_variance_tol(model, cov)) {
        return Err(Error::ZeroVarianceModel(total));
    }
    u.check(model.dim())?;
    if u.is_empty() {
        return Ok(0.0);
    }
    if u.is_full(model.dim()) {
        return Ok(1.0);
    }
    Ok(1.0 - conditional_variance_linear(model, cov, u)? / total)
}

/// Connected components of the graph with an edge `(i, j)` iff
/// `|Σ_ij| > tol · √(Σ_ii Σ_jj)`. Blocks are sorted and ordered by first index.
pub fn block_decompose(cov: &CovMatrix, tol: f64) -> Vec<Vec<usize>> {
    let p = cov.dim();
    let mut block_of = vec![usize::MAX; p];
    let mut blocks = Vec::new();
    for start in 0..p {
        if block_of[start] != usize::MAX {
            continue;
        }
        let id = blocks.len();
        let mut members = vec![start];
        block_of[start] = id;
        let mut head = 0;
        while head < members.len() {
            let i = members[head];
            head += 1;
            for j in 0..p {
                if block_of[j] == usize::MAX && cov.get(i, j).abs() > tol * (cov.get(i, i) * cov.get(j, j)).sqrt() {
                    block_of[j] = id;
                    members.push(j);
                }
            }
        }
        members.sort_unstable();
        blocks.push(members);
    }
    blocks
}

/// Shapley effects computed per independent block and rescaled by each block's
/// share `β_bᵀΣ_bβ_b / Σ_b' β_b'ᵀΣ_b'β_b'` of the output variance.
pub fn shapley_linear_blockwise(model: &LinearModel, cov: &CovMatrix, tol: f64) -> Result<ShapleyVector> {
    model.check_dim(cov)?;
    let blocks = block_decompose(cov, tol);
    let mut values = vec![0.0; model.dim()];
    let mut total = 0.0;
    for block in &blocks {
        let sub = LinearModel::new(0.0, block.iter().map(|&i| model.coeffs[i]).collect());
        let sub_cov = CovMatrix::new(cov.select(block))?;
        let var_b = sub.output_variance(&sub_cov)?;
        if !(var_b > zero_variance_tol(&sub, &sub_cov)) {
            continue;
        }
        let eta_b = shapley_linear(&sub, &sub_cov)?;
        for (&i, e) in block.iter().zip(&eta_b.values) {
            values[i] = e * var_b;
        }
        total += var_b;
    }
    if !(total > 0.0) {
        return Err(Error::ZeroVarianceModel(total));
    }
    values.iter_mut().for_each(|v| *v /= total);
    Ok(ShapleyVector::exact(values))
}
