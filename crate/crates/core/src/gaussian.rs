//! Multivariate Gaussian primitives: covariance validation and factorization,
//! subset masks, conditional moments and sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Largest dimension for which subset masks are supported.
pub const MAX_DIM: usize = 25;

const SYMMETRY_TOL: f64 = 1e-10;

/// Symmetric positive-definite covariance with its cached lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
    chol: DMatrix<f64>,
}

/// Lower Cholesky factor of `m`, rejecting pivots at or below `dim * eps * max diag`.
pub(crate) fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let max_diag = (0..n).map(|i| m[(i, i)].abs()).fold(0.0_f64, f64::max);
    let tol = n as f64 * f64::EPSILON * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tol) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: pivot, tol });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` given the lower factor `L`.
pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l.solve_lower_triangular(b).expect("cholesky factor has a nonzero diagonal");
    l.transpose().solve_upper_triangular(&y).expect("cholesky factor has a nonzero diagonal")
}

impl CovMatrix {
    /// Validates symmetry, symmetrizes as `(M + Mᵀ)/2` and caches the Cholesky factor.
    pub fn new(raw: DMatrix<f64>) -> Result<Self> {
        if raw.nrows() != raw.ncols() {
            return Err(Error::NotSquare { rows: raw.nrows(), cols: raw.ncols() });
        }
        if raw.nrows() == 0 {
            return Err(Error::InvalidParameter("covariance must be at least 1x1".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("covariance has non-finite entries".into()));
        }
        let scale = raw.amax();
        let max_asym = (&raw - raw.transpose()).amax();
        if max_asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { max_asym });
        }
        let entries = (&raw + raw.transpose()) * 0.5;
        let chol = cholesky_lower(&entries)?;
        Ok(Self { entries, chol })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::NotSquare { rows: p, cols: bad.len() });
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p)).expect("identity is positive definite")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entries[(i, i)]).collect()
    }

    /// `c · Σ` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale factor {c} must be positive")));
        }
        Ok(Self { entries: &self.entries * c, chol: &self.chol * c.sqrt() })
    }

    /// Principal sub-block on the given (sorted) indices.
    pub fn select(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.entries[(idx[a], idx[b])])
    }

    /// Rectangular block `Σ[rows, cols]`.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.entries[(rows[a], cols[b])])
    }

    /// Same matrix with rows and columns reordered: `out[(a, b)] = Σ[(perm[a], perm[b])]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Self::new(self.select(perm))
    }
}

/// Bitmask over variable indices `0..p`; bit `i` set iff variable `i` is in the subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SubsetMask(pub u32);

impl SubsetMask {
    pub const EMPTY: SubsetMask = SubsetMask(0);

    pub fn full(p: usize) -> Self {
        debug_assert!(p <= MAX_DIM);
        SubsetMask(((1u64 << p) - 1) as u32)
    }

    pub fn from_indices(indices: &[usize]) -> Self {
        SubsetMask(indices.iter().fold(0u32, |m, &i| m | (1 << i)))
    }

    pub fn singleton(i: usize) -> Self {
        SubsetMask(1 << i)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        SubsetMask(self.0 | (1 << i))
    }

    pub fn without(self, i: usize) -> Self {
        SubsetMask(self.0 & !(1 << i))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn complement(self, p: usize) -> Self {
        SubsetMask(!self.0 & Self::full(p).0)
    }

    pub fn is_subset_of(self, other: SubsetMask) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_full(self, p: usize) -> bool {
        self == Self::full(p)
    }

    /// Member indices in increasing order.
    pub fn indices(self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut bits = self.0;
        while bits != 0 {
            out.push(bits.trailing_zeros() as usize);
            bits &= bits - 1;
        }
        out
    }

    /// Checks that only bits in `0..p` are set.
    pub fn check(self, p: usize) -> Result<()> {
        if p > MAX_DIM {
            return Err(Error::DimensionTooLarge {
                p,
                max: MAX_DIM,
                hint: "subset masks support at most 25 variables",
            });
        }
        if !self.is_subset_of(Self::full(p)) {
            return Err(Error::InvalidSubset(format!("mask {:#b} has bits outside 0..{p}", self.0)));
        }
        Ok(())
    }

    fn check_proper(self, p: usize) -> Result<()> {
        self.check(p)?;
        if self.is_empty() || self.is_full(p) {
            return Err(Error::InvalidSubset("conditioning set must be nonempty and not the full index set".into()));
        }
        Ok(())
    }
}

/// Input law `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    mean: DVector<f64>,
    cov: CovMatrix,
}

impl GaussianSpec {
    pub fn new(mean: DVector<f64>, cov: CovMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch { expected: cov.dim(), actual: mean.len() });
        }
        Ok(Self { mean, cov })
    }

    pub fn from_parts(mean: &[f64], cov: CovMatrix) -> Result<Self> {
        Self::new(DVector::from_column_slice(mean), cov)
    }

    pub fn standard(p: usize) -> Self {
        Self { mean: DVector::zeros(p), cov: CovMatrix::identity(p) }
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &CovMatrix {
        &self.cov
    }

    /// Fills `out` with one draw `mean + L z`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        let p = self.dim();
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let l = &self.cov.chol;
        for i in 0..p {
            let mut s = self.mean[i];
            for k in 0..=i {
                s += l[(i, k)] * z[k];
            }
            out[i] = s;
        }
    }

    pub fn conditional_plan(&self, u: SubsetMask) -> Result<ConditionalPlan> {
        ConditionalPlan::new(self, u)
    }
}

/// Inputs (and optionally outputs) of a batch of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub inputs: DMatrix<f64>,
    pub outputs: Option<DVector<f64>>,
    pub seed_tag: u64,
}

impl SampleBatch {
    pub fn new(inputs: DMatrix<f64>, outputs: Option<DVector<f64>>, seed_tag: u64) -> Result<Self> {
        if let Some(y) = &outputs {
            if y.len() != inputs.nrows() {
                return Err(Error::DimensionMismatch { expected: inputs.nrows(), actual: y.len() });
            }
        }
        Ok(Self { inputs, outputs, seed_tag })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).iter().copied().collect()
    }

    /// Evaluates `f` on every row and stores the outputs.
    pub fn with_outputs(mut self, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut buf = vec![0.0; self.dim()];
        let y = DVector::from_fn(self.len(), |i, _| {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = self.inputs[(i, j)];
            }
            f(&buf)
        });
        self.outputs = Some(y);
        self
    }
}

/// Pre-factored conditional law of `X_{-u}` given `X_u`.
///
/// Holds the factor of `Σ_{u,u}` (for drawing `X_u`), the regression gain
/// `K = Σ_{-u,u} Σ_{u,u}^{-1}` and the Schur complement
/// `Σ_{-u,-u} - K Σ_{u,-u}` as a validated [`CovMatrix`].
#[derive(Debug, Clone)]
pub struct ConditionalPlan {
    given: Vec<usize>,
    rest: Vec<usize>,
    mean_given: DVector<f64>,
    mean_rest: DVector<f64>,
    chol_given: DMatrix<f64>,
    gain: DMatrix<f64>,
    cov_rest: CovMatrix,
}

impl ConditionalPlan {
    pub fn new(spec: &GaussianSpec, u: SubsetMask) -> Result<Self> {
        let p = spec.dim();
        u.check_proper(p)?;
        let given = u.indices();
        let rest = u.complement(p).indices();
        let cov = spec.cov();
        let s_uu = cov.select(&given);
        let s_ur = cov.block(&given, &rest);
        let chol_given = cholesky_lower(&s_uu)?;
        // K^T = Σ_uu^{-1} Σ_{u,-u}
        let gain_t = cholesky_solve(&chol_given, &s_ur);
        let schur = cov.select(&rest) - s_ur.transpose() * &gain_t;
        let cov_rest = CovMatrix::new((&schur + schur.transpose()) * 0.5)?;
        let pick = |idx: &[usize]| DVector::from_fn(idx.len(), |a, _| spec.mean()[idx[a]]);
        Ok(Self {
            mean_given: pick(&given),
            mean_rest: pick(&rest),
            given,
            rest,
            chol_given,
            gain: gain_t.transpose(),
            cov_rest,
        })
    }

    pub fn given(&self) -> &[usize] {
        &self.given
    }

    pub fn rest(&self) -> &[usize] {
        &self.rest
    }

    pub fn cov_rest(&self) -> &CovMatrix {
        &self.cov_rest
    }

    /// `μ_{-u} + K (x_u - μ_u)`.
    pub fn conditional_mean(&self, x_given: &[f64]) -> Result<DVector<f64>> {
        if x_given.len() != self.given.len() {
            return Err(Error::DimensionMismatch { expected: self.given.len(), actual: x_given.len() });
        }
        let dx = DVector::from_fn(self.given.len(), |a, _| x_given[a] - self.mean_given[a]);
        Ok(&self.mean_rest + &self.gain * dx)
    }

    /// Draws `X_u` from its marginal, writing into the `u` slots of `x`.
    pub fn draw_given<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut [f64]) {
        let k = self.given.len();
        let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        for a in 0..k {
            let mut s = self.mean_given[a];
            for b in 0..=a {
                s += self.chol_given[(a, b)] * z[b];
            }
            x[self.given[a]] = s;
        }
    }

    /// Draws `X_{-u} | X_u` where the `u` slots of `x` already hold the conditioning values.
    pub fn draw_rest<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut [f64]) {
        let r = self.rest.len();
        let l = self.cov_rest.cholesky_factor();
        let z: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        for a in 0..r {
            let mut s = self.mean_rest[a];
            for (b, &g) in self.given.iter().enumerate() {
                s += self.gain[(a, b)] * (x[g] - self.mean_given[b]);
            }
            for b in 0..=a {
                s += l[(a, b)] * z[b];
            }
            x[self.rest[a]] = s;
        }
    }
}

/// Mean and covariance of `X_{-u}` given `X_u = x_u`.
pub fn conditional_moments(spec: &GaussianSpec, u: SubsetMask, x_u: &[f64]) -> Result<(DVector<f64>, CovMatrix)> {
    let plan = ConditionalPlan::new(spec, u)?;
    let mean = plan.conditional_mean(x_u)?;
    Ok((mean, plan.cov_rest))
}

/// `n` i.i.d. draws from `spec`.
pub fn sample_marginal(spec: &GaussianSpec, n: usize, stream: Stream) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    let p = spec.dim();
    let mut rng = stream.rng();
    let mut inputs = DMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    let mut x = vec![0.0; p];
    for i in 0..n {
        spec.draw_into(&mut rng, &mut z, &mut x);
        for j in 0..p {
            inputs[(i, j)] = x[j];
        }
    }
    SampleBatch::new(inputs, None, stream.key())
}

/// `n` i.i.d. draws of `X_{-u}` given `X_u = x_u`; columns follow the increasing order of `-u`.
pub fn sample_conditional(
    spec: &GaussianSpec,
    u: SubsetMask,
    x_u: &[f64],
    n: usize,
    stream: Stream,
) -> Result<SampleBatch> {
    let (mean, cov) = conditional_moments(spec, u, x_u)?;
    sample_marginal(&GaussianSpec::new(mean, cov)?, n, stream)
}
