//! Monte-Carlo reference estimators of Shapley effects for non-linear models.
//!
//! * [`double_mc_closed_sobol`] / [`shapley_subset_oracle`]: nested sampling of
//!   every closed Sobol index, aggregated with the Shapley weights.
//! * [`shapley_perm_mc`]: random-permutation estimator with the conditional
//!   variance cost `c(u) = E[V(Y|X_u)]`.
//! * [`knn_closed_sobol`] / [`knn_shapley`]: given-data estimator replacing
//!   conditional sampling by nearest neighbours in the conditioning coordinates.
//!
//! Every work unit draws from a stream derived from its index, so results do
//! not depend on the number of threads.

use std::sync::OnceLock;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{shapley_from_closed_sobol, BinomialWeights, ShapleyVector};
use crate::gaussian::{ConditionalPlan, GaussianSpec, SampleBatch, SubsetMask};
use crate::models::BlackBoxModel;
use crate::rng::Stream;

/// Largest dimension accepted by [`shapley_subset_oracle`] and [`knn_shapley`].
pub const ORACLE_MAX_DIM: usize = 12;

const BOOTSTRAP_RESAMPLES: usize = 200;

/// Budgets of the permutation estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PermEstimatorParams {
    /// Marginal draws used for `V(Y)`.
    pub n_var: usize,
    /// Random permutations.
    pub n_perms: usize,
    /// Conditional draws per outer point.
    pub n_inner: usize,
    /// Outer draws of the prefix variables per permutation position.
    #[serde(default = "one")]
    pub n_outer_per_prefix: usize,
}

fn one() -> usize {
    1
}

impl Default for PermEstimatorParams {
    fn default() -> Self {
        Self { n_var: 100_000, n_perms: 1_000, n_inner: 3, n_outer_per_prefix: 1 }
    }
}

impl PermEstimatorParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_var < 2 || self.n_perms < 1 || self.n_inner < 2 || self.n_outer_per_prefix < 1 {
            return Err(Error::InvalidParameter(format!(
                "permutation budgets need n_var >= 2, n_perms >= 1, n_inner >= 2, n_outer_per_prefix >= 1; got {self:?}"
            )));
        }
        Ok(())
    }

    /// Scales `n_var` and `n_perms` by `factor`, keeping the inner budgets.
    pub fn scaled(self, factor: f64) -> Self {
        let s = |n: usize, min: usize| ((n as f64 * factor).round() as usize).max(min);
        Self { n_var: s(self.n_var, 2), n_perms: s(self.n_perms, 1), ..self }
    }
}

/// Budgets of the double-loop closed Sobol estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    pub n_outer: usize,
    pub n_inner: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self { n_outer: 2_000, n_inner: 100 }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_outer < 2 || self.n_inner < 2 {
            return Err(Error::InvalidParameter(format!("oracle budgets must both be at least 2; got {self:?}")));
        }
        Ok(())
    }
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Per-outer-point inner mean and unbiased inner variance.
fn inner_moments(
    f: &BlackBoxModel,
    plan: &ConditionalPlan,
    p: usize,
    n_inner: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let mut x = vec![0.0; p];
    plan.draw_given(rng, &mut x);
    let mut ys = Vec::with_capacity(n_inner);
    for _ in 0..n_inner {
        plan.draw_rest(rng, &mut x);
        ys.push(f.evaluate(&x)?);
    }
    Ok(mean_var(&ys))
}

/// `(V̂(E) , V̂(Y))` from outer units, with the inner-noise correction
/// `V̂outer(means) − mean(inner var)/n_inner` and `V̂(Y) = V̂(E) + mean(inner var)`.
fn closed_sobol_from_units(units: &[(f64, f64)], n_inner: usize) -> f64 {
    let means: Vec<f64> = units.iter().map(|u| u.0).collect();
    let (_, var_means) = mean_var(&means);
    let mean_inner_var = units.iter().map(|u| u.1).sum::<f64>() / units.len() as f64;
    let explained = var_means - mean_inner_var / n_inner as f64;
    let total = explained + mean_inner_var;
    if total > 0.0 {
        explained / total
    } else {
        0.0
    }
}

/// Double Monte-Carlo estimate of `V(E(Y|X_u))/V(Y)` with a bootstrap standard error.
pub fn double_mc_closed_sobol_with_se(
    f: &BlackBoxModel,
    spec: &GaussianSpec,
    u: SubsetMask,
    params: &OracleParams,
    stream: Stream,
) -> Result<Estimate> {
    params.validate()?;
    let p = spec.dim();
    u.check(p)?;
    if f.arity() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: f.arity() });
    }
    if u.is_empty() {
        return Ok(Estimate { value: 0.0, std_error: 0.0 });
    }
    if u.is_full(p) {
        return Ok(Estimate { value: 1.0, std_error: 0.0 });
    }
    let plan = spec.conditional_plan(u)?;
    let units = (0..params.n_outer as u64)
        .into_par_iter()
        .map(|o| inner_moments(f, &plan, p, params.n_inner, &mut stream.child(o).rng()))
        .collect::<Result<Vec<_>>>()?;
    let value = closed_sobol_from_units(&units, params.n_inner);

    let mut rng = stream.named("bootstrap").rng();
    let mut resample = vec![(0.0, 0.0); units.len()];
    let boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for slot in resample.iter_mut() {
                *slot = units[rng.random_range(0..units.len())];
            }
            closed_sobol_from_units(&resample, params.n_inner)
        })
        .collect();
    let (_, boot_var) = mean_var(&boots);
    Ok(Estimate { value, std_error: boot_var.sqrt() })
}

/// Double Monte-Carlo estimate of the closed Sobol index `V(E(Y|X_u))/V(Y)`.
///
/// `u = ∅` and the full set return 0 and 1 without sampling.
pub fn double_mc_closed_sobol(
    f: &BlackBoxModel,
    spec: &GaussianSpec,
    u: SubsetMask,
    params: &OracleParams,
    stream: Stream,
) -> Result<f64> {
    double_mc_closed_sobol_with_se(f, spec, u, params, stream).map(|e| e.value)
}

fn check_oracle_dim(p: usize) -> Result<()> {
    if p > ORACLE_MAX_DIM {
        return Err(Error::DimensionTooLarge {
            p,
            max: ORACLE_MAX_DIM,
            hint: "subset-table estimators cost 2^p nested estimates",
        });
    }
    Ok(())
}

/// Standard errors of the Shapley aggregate of independent closed Sobol estimates.
fn propagate_se(p: usize, se: &[f64], weights: &BinomialWeights) -> Vec<f64> {
    (0..p)
        .map(|i| {
            let mut var = 0.0;
            for (mask, s) in se.iter().enumerate() {
                let u = SubsetMask(mask as u32);
                let coef = if u.contains(i) {
                    weights.get(u.len() - 1)
                } else if u.len() < p {
                    weights.get(u.len())
                } else {
                    0.0
                };
                var += (coef / p as f64 * s).powi(2);
            }
            var.sqrt()
        })
        .collect()
}

/// Shapley effects from double Monte-Carlo estimates of every closed Sobol index.
pub fn shapley_subset_oracle(
    f: &BlackBoxModel,
    spec: &GaussianSpec,
    params: &OracleParams,
    stream: Stream,
) -> Result<ShapleyVector> {
    let p = spec.dim();
    check_oracle_dim(p)?;
    let estimates = (0..1u32 << p)
        .into_par_iter()
        .map(|bits| double_mc_closed_sobol_with_se(f, spec, SubsetMask(bits), params, stream.child(u64::from(bits))))
        .collect::<Result<Vec<_>>>()?;
    let weights = BinomialWeights::new(p);
    let closed: Vec<f64> = estimates.iter().map(|e| e.value).collect();
    let se: Vec<f64> = estimates.iter().map(|e| e.std_error).collect();
    Ok(ShapleyVector::estimate(shapley_from_closed_sobol(p, &closed, &weights), Some(propagate_se(p, &se, &weights))))
}

/// Conditional plans for every proper subset, built on first use.
struct PlanCache<'a> {
    spec: &'a GaussianSpec,
    plans: Vec<OnceLock<ConditionalPlan>>,
}

impl<'a> PlanCache<'a> {
    const MAX_CACHED_DIM: usize = 16;

    fn new(spec: &'a GaussianSpec) -> Self {
        let slots = if spec.dim() <= Self::MAX_CACHED_DIM { 1usize << spec.dim() } else { 0 };
        Self { spec, plans: (0..slots).map(|_| OnceLock::new()).collect() }
    }

    fn with_plan<T>(&self, u: SubsetMask, body: impl FnOnce(&ConditionalPlan) -> Result<T>) -> Result<T> {
        match self.plans.get(u.bits() as usize) {
            Some(slot) => {
                if slot.get().is_none() {
                    let _ = slot.set(self.spec.conditional_plan(u)?);
                }
                body(slot.get().expect("slot initialized above"))
            }
            None => body(&self.spec.conditional_plan(u)?),
        }
    }
}

fn output_variance_mc(f: &BlackBoxModel, spec: &GaussianSpec, n: usize, stream: Stream) -> Result<f64> {
    const CHUNK: usize = 4096;
    let p = spec.dim();
    let chunks = n.div_ceil(CHUNK);
    let ys = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.child(c as u64).rng();
            let len = CHUNK.min(n - c * CHUNK);
            let (mut z, mut x) = (vec![0.0; p], vec![0.0; p]);
            (0..len)
                .map(|_| {
                    spec.draw_into(&mut rng, &mut z, &mut x);
                    f.evaluate(&x)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok(mean_var(&ys).1)
}

/// Random-permutation Shapley estimator.
///
/// `V(Y)` comes from `n_var` marginal draws. For each random permutation and
/// each proper prefix, `c(prefix) = E[V(Y|X_prefix)]` is estimated from
/// `n_outer_per_prefix` outer draws with `n_inner` conditional draws each;
/// the variable entering at position `j` is credited
/// `(ĉ(prefix_{j−1}) − ĉ(prefix_j)) / (n_perms · V̂(Y))`, with `ĉ(∅) = V̂(Y)`
/// and `ĉ(full) = 0`.
pub fn shapley_perm_mc(
    f: &BlackBoxModel,
    spec: &GaussianSpec,
    params: &PermEstimatorParams,
    stream: Stream,
) -> Result<ShapleyVector> {
    params.validate()?;
    let p = spec.dim();
    if f.arity() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: f.arity() });
    }
    if p == 1 {
        return Ok(ShapleyVector::estimate(vec![1.0], Some(vec![0.0])));
    }
    SubsetMask::EMPTY.check(p)?;
    let var_y = output_variance_mc(f, spec, params.n_var, stream.named("output-variance"))?;
    if !(var_y > 0.0) {
        return Err(Error::ZeroVarianceModel(var_y));
    }
    let plans = PlanCache::new(spec);
    let perm_stream = stream.named("permutations");
    let contributions = (0..params.n_perms as u64)
        .into_par_iter()
        .map(|k| {
            let unit = perm_stream.child(k);
            let mut order: Vec<usize> = (0..p).collect();
            order.shuffle(&mut unit.rng());
            let mut credit = vec![0.0; p];
            let mut prefix = SubsetMask::EMPTY;
            let mut prev = var_y;
            for (j, &var) in order.iter().enumerate() {
                prefix = prefix.with(var);
                let cost = if j + 1 == p {
                    0.0
                } else {
                    let mut rng = unit.child(j as u64 + 1).rng();
                    plans.with_plan(prefix, |plan| {
                        let mut acc = 0.0;
                        for _ in 0..params.n_outer_per_prefix {
                            acc += inner_moments(f, plan, p, params.n_inner, &mut rng)?.1;
                        }
                        Ok(acc / params.n_outer_per_prefix as f64)
                    })?
                };
                credit[var] = (prev - cost) / var_y;
                prev = cost;
            }
            Ok(credit)
        })
        .collect::<Result<Vec<_>>>()?;

    let m = params.n_perms as f64;
    let mut values = vec![0.0; p];
    for c in &contributions {
        for (v, x) in values.iter_mut().zip(c) {
            *v += x;
        }
    }
    values.iter_mut().for_each(|v| *v /= m);
    let se = if params.n_perms > 1 {
        (0..p)
            .map(|i| {
                let ss: f64 = contributions.iter().map(|c| (c[i] - values[i]).powi(2)).sum();
                (ss / (m - 1.0) / m).sqrt()
            })
            .collect()
    } else {
        vec![f64::NAN; p]
    };
    Ok(ShapleyVector::estimate(values, Some(se)))
}

/// Nearest-neighbour estimate of `V(E(Y|X_u))/V(Y)` from a given sample,
/// using every sample point as an anchor.
pub fn knn_closed_sobol(batch: &SampleBatch, u: SubsetMask, k: usize) -> Result<f64> {
    knn_closed_sobol_with_anchors(batch, u, k, batch.len())
}

/// As [`knn_closed_sobol`] with an explicit number of evenly spaced anchors.
///
/// For each anchor, `Y` is averaged over its `k` nearest sample points in the
/// standardized `X_u` coordinates (the anchor included). The variance of those
/// local means over anchors, minus the mean local variance divided by `k`, is
/// divided by the sample variance of `Y`.
pub fn knn_closed_sobol_with_anchors(batch: &SampleBatch, u: SubsetMask, k: usize, n_anchors: usize) -> Result<f64> {
    let y = batch
        .outputs
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("nearest-neighbour estimate needs outputs".into()))?;
    let (n, p) = (batch.len(), batch.dim());
    u.check(p)?;
    if k < 2 {
        return Err(Error::InvalidParameter(format!("neighbour count {k} must be at least 2")));
    }
    if n < 10 * k {
        return Err(Error::TooFewSamples { needed: 10 * k, got: n });
    }
    if n_anchors < 2 {
        return Err(Error::InvalidParameter("need at least 2 anchors".into()));
    }
    if u.is_empty() {
        return Ok(0.0);
    }
    let (_, var_y) = mean_var(y.as_slice());
    let cols = u.indices();
    // standardized coordinates, row-major
    let mut coords = vec![0.0; n * cols.len()];
    for (c, &j) in cols.iter().enumerate() {
        let column: Vec<f64> = batch.inputs.column(j).iter().copied().collect();
        let (mean, var) = mean_var(&column);
        if !(var > 0.0) {
            return Err(Error::DegenerateCoordinates(j));
        }
        let sd = var.sqrt();
        for (r, x) in column.iter().enumerate() {
            coords[r * cols.len() + c] = (x - mean) / sd;
        }
    }
    if !(var_y > 0.0) {
        return Ok(0.0);
    }
    let d = cols.len();
    let n_anchors = n_anchors.min(n);
    let stride = n as f64 / n_anchors as f64;
    let local: Vec<(f64, f64)> = (0..n_anchors)
        .into_par_iter()
        .map(|a| {
            let anchor = (a as f64 * stride) as usize;
            let base = &coords[anchor * d..(anchor + 1) * d];
            let mut dist: Vec<(f64, usize)> = (0..n)
                .map(|r| {
                    let row = &coords[r * d..(r + 1) * d];
                    (row.iter().zip(base).map(|(x, b)| (x - b) * (x - b)).sum::<f64>(), r)
                })
                .collect();
            dist.select_nth_unstable_by(k - 1, |l, r| l.partial_cmp(r).expect("finite distances"));
            let ys: Vec<f64> = dist[..k].iter().map(|&(_, r)| y[r]).collect();
            mean_var(&ys)
        })
        .collect();
    let means: Vec<f64> = local.iter().map(|l| l.0).collect();
    let (_, var_means) = mean_var(&means);
    let mean_local_var = local.iter().map(|l| l.1).sum::<f64>() / local.len() as f64;
    Ok((var_means - mean_local_var / k as f64) / var_y)
}

/// Shapley effects from nearest-neighbour closed Sobol estimates of every subset.
///
/// The full set is fixed at 1 (the output is a deterministic function of all inputs).
pub fn knn_shapley(batch: &SampleBatch, k: usize, n_anchors: usize) -> Result<ShapleyVector> {
    let p = batch.dim();
    check_oracle_dim(p)?;
    let full = SubsetMask::full(p).bits();
    let closed = (0..1u32 << p)
        .into_par_iter()
        .map(|bits| match bits {
            0 => Ok(0.0),
            b if b == full => Ok(1.0),
            b => knn_closed_sobol_with_anchors(batch, SubsetMask(b), k, n_anchors),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapleyVector::estimate(shapley_from_closed_sobol(p, &closed, &BinomialWeights::new(p)), None))
}

/// Evaluates `f` on every input row of `batch`.
pub fn attach_outputs(f: &BlackBoxModel, batch: SampleBatch) -> Result<SampleBatch> {
    let ys = (0..batch.len()).map(|i| f.evaluate(&batch.row(i))).collect::<Result<Vec<_>>>()?;
    SampleBatch::new(batch.inputs, Some(DVector::from_vec(ys)), batch.seed_tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{closed_sobol_linear, shapley_linear, LinearModel};
    use crate::gaussian::{sample_marginal, CovMatrix};
    use crate::models::{remark1_input, remark1_shapley, BuiltinModel};
    use nalgebra::DMatrix;

    fn linear_box(m: &LinearModel) -> BlackBoxModel {
        BuiltinModel::Linear(m.clone()).black_box()
    }

    #[test]
    fn trivial_subsets_short_circuit() {
        let spec = GaussianSpec::standard(3);
        let f = BuiltinModel::Sqnorm { dim: 3 }.black_box();
        let params = OracleParams::default();
        assert_eq!(double_mc_closed_sobol(&f, &spec, SubsetMask::EMPTY, &params, Stream::new(1)).unwrap(), 0.0);
        assert_eq!(double_mc_closed_sobol(&f, &spec, SubsetMask::full(3), &params, Stream::new(1)).unwrap(), 1.0);
        assert_eq!(f.eval_count(), 0);
    }

    #[test]
    fn double_mc_matches_linear_closed_form() {
        let cov = CovMatrix::from_rows(&[vec![1.0, 0.5, 0.2], vec![0.5, 2.0, -0.3], vec![0.2, -0.3, 1.5]]).unwrap();
        let m = LinearModel::new(1.0, vec![1.0, -0.5, 2.0]);
        let spec = GaussianSpec::from_parts(&[0.0, 1.0, -1.0], cov.clone()).unwrap();
        let f = linear_box(&m);
        for bits in 1..7u32 {
            let u = SubsetMask(bits);
            let est = double_mc_closed_sobol_with_se(&f, &spec, u, &OracleParams::default(), Stream::new(bits as u64))
                .unwrap();
            let exact = closed_sobol_linear(&m, &cov, u).unwrap();
            assert!((est.value - exact).abs() < 3.0 * est.std_error + 1e-3, "u={bits:b} {est:?} vs {exact}");
        }
    }

    #[test]
    fn double_mc_remark1() {
        let spec = remark1_input(4.0).unwrap();
        let f = BuiltinModel::Remark1.black_box();
        let s = double_mc_closed_sobol(&f, &spec, SubsetMask::singleton(0), &OracleParams::default(), Stream::new(2))
            .unwrap();
        assert!((s - 2.0 / 3.0).abs() < 0.03, "{s}");
    }

    #[test]
    fn oracle_examples() {
        let f = BuiltinModel::Remark1.black_box();
        let eta =
            shapley_subset_oracle(&f, &remark1_input(4.0).unwrap(), &OracleParams::default(), Stream::new(3)).unwrap();
        assert!(eta.max_abs_diff(&remark1_shapley(4.0)) < 0.03, "{eta:?}");

        let sym = linear_box(&LinearModel::new(0.0, vec![1.0, 1.0]));
        let eta =
            shapley_subset_oracle(&sym, &GaussianSpec::standard(2), &OracleParams::default(), Stream::new(4)).unwrap();
        assert!(eta.max_abs_diff(&[0.5, 0.5]) < 0.03);

        let big = BuiltinModel::Sqnorm { dim: 13 }.black_box();
        assert!(matches!(
            shapley_subset_oracle(&big, &GaussianSpec::standard(13), &OracleParams::default(), Stream::new(0)),
            Err(Error::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn oracle_matches_linear_within_three_se() {
        let cov = CovMatrix::from_rows(&[vec![2.0, 0.6, 0.0], vec![0.6, 1.0, 0.4], vec![0.0, 0.4, 1.0]]).unwrap();
        let m = LinearModel::new(0.0, vec![1.0, 2.0, -1.0]);
        let spec = GaussianSpec::new(DVector::zeros(3), cov.clone()).unwrap();
        let est = shapley_subset_oracle(&linear_box(&m), &spec, &OracleParams::default(), Stream::new(5)).unwrap();
        let exact = shapley_linear(&m, &cov).unwrap();
        let se = est.std_errors.clone().unwrap();
        for i in 0..3 {
            assert!((est.values[i] - exact.values[i]).abs() <= 3.0 * se[i], "{i}: {est:?} vs {exact:?}");
        }
    }

    #[test]
    fn permutation_examples() {
        let params = PermEstimatorParams { n_var: 10_000, n_perms: 500, n_inner: 3, n_outer_per_prefix: 1 };
        let f = linear_box(&LinearModel::new(0.0, vec![1.0, 2.0]));
        let eta = shapley_perm_mc(&f, &GaussianSpec::standard(2), &params, Stream::new(6)).unwrap();
        assert!(eta.max_abs_diff(&[0.2, 0.8]) < 0.05, "{eta:?}");
        assert!((eta.sum() - 1.0).abs() < 1e-12);

        let eta =
            shapley_perm_mc(&BuiltinModel::Remark1.black_box(), &remark1_input(8.0).unwrap(), &params, Stream::new(7))
                .unwrap();
        assert!(eta.max_abs_diff(&[0.8, 0.2]) < 0.05, "{eta:?}");

        let tiny = PermEstimatorParams { n_var: 2, n_perms: 1, n_inner: 2, n_outer_per_prefix: 1 };
        let f1 = BlackBoxModel::new(1, |x| x[0].exp());
        let eta = shapley_perm_mc(&f1, &GaussianSpec::standard(1), &tiny, Stream::new(0)).unwrap();
        assert_eq!(eta.values, vec![1.0]);
    }

    #[test]
    fn permutation_is_deterministic_across_pools() {
        let params = PermEstimatorParams { n_var: 5_000, n_perms: 64, n_inner: 3, n_outer_per_prefix: 2 };
        let f = BuiltinModel::Fig1.black_box();
        let spec = crate::models::fig1_input(2);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| shapley_perm_mc(&f, &spec, &params, Stream::new(99)).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn permutation_budget_validation() {
        let f = BuiltinModel::Remark1.black_box();
        let bad = PermEstimatorParams { n_inner: 1, ..PermEstimatorParams::default() };
        assert!(shapley_perm_mc(&f, &GaussianSpec::standard(2), &bad, Stream::new(0)).is_err());
        let scaled = PermEstimatorParams::default().scaled(0.1);
        assert_eq!((scaled.n_var, scaled.n_perms, scaled.n_inner), (10_000, 100, 3));
    }

    #[test]
    fn knn_constant_output_is_zero() {
        let b = sample_marginal(&GaussianSpec::standard(2), 500, Stream::new(8)).unwrap().with_outputs(|_| 4.0);
        assert_eq!(knn_closed_sobol(&b, SubsetMask::singleton(0), 10).unwrap(), 0.0);
    }

    #[test]
    fn knn_identity_output_is_one() {
        let b = sample_marginal(&GaussianSpec::standard(2), 10_000, Stream::new(9)).unwrap().with_outputs(|x| x[0]);
        let s = knn_closed_sobol(&b, SubsetMask::singleton(0), 50).unwrap();
        assert!((s - 1.0).abs() < 0.05, "{s}");
    }

    #[test]
    fn knn_errors() {
        let mut b = sample_marginal(&GaussianSpec::standard(2), 200, Stream::new(10)).unwrap();
        for r in 0..200 {
            b.inputs[(r, 1)] = 1.0;
        }
        let b = b.with_outputs(|x| x[0]);
        assert!(matches!(knn_closed_sobol(&b, SubsetMask::singleton(1), 5), Err(Error::DegenerateCoordinates(1))));
        assert!(matches!(knn_closed_sobol(&b, SubsetMask::singleton(0), 50), Err(Error::TooFewSamples { .. })));
        assert!(knn_closed_sobol(&b, SubsetMask::singleton(0), 1).is_err());
        let no_y = SampleBatch::new(DMatrix::zeros(100, 1), None, 0).unwrap();
        assert!(knn_closed_sobol(&no_y, SubsetMask::singleton(0), 5).is_err());
    }

    #[test]
    fn knn_shapley_linear_case() {
        let m = LinearModel::new(0.0, vec![1.0, 2.0]);
        let b = sample_marginal(&GaussianSpec::standard(2), 5_000, Stream::new(12)).unwrap();
        let b = attach_outputs(&linear_box(&m), b).unwrap();
        let eta = knn_shapley(&b, 20, 1_000).unwrap();
        assert!(eta.max_abs_diff(&[0.2, 0.8]) < 0.05, "{eta:?}");
    }
}
