//! Inputs that are empirical means of i.i.d. vectors, and the
//! Gaussian-linear approximation of their Shapley effects.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Exp, Normal, Triangular};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{shapley_linear, LinearModel, ShapleyVector};
use crate::gaussian::{CovMatrix, GaussianSpec};
use crate::linearize::{finite_diff_gradient, taylor_linear, StepVector};
use crate::models::BlackBoxModel;
use crate::rng::{Stream, StreamRng};

/// Source of i.i.d. draws of the base vector `U`.
pub trait BaseSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn name(&self) -> &str;
    fn draw(&self, rng: &mut StreamRng, out: &mut [f64]);
}

/// Standard deviation of the normal component; `N(0, 4)` is read as variance 4.
pub const SECTION42_NORMAL_STD: f64 = 2.0;

/// Row `i` gives the weights of `A₁..A₅` in `Uᵢ`.
pub const SECTION42_MIXING: [[f64; 5]; 5] = [
    [1.0, 2.0, -0.5, 0.0, 0.0],
    [2.0, 1.0, 0.0, 0.0, -0.5],
    [0.0, 2.0, 1.0, 0.0, -0.5],
    [2.0, -0.5, 0.0, 1.0, 0.0],
    [0.0, 0.0, 2.0, -0.5, 1.0],
];

/// Five dependent variables mixed from
/// `A₁ ~ U[5,10]`, `A₂ ~ N(0, 4)`, `A₃ ~ Tri(−1, 8, mode 3.5)`, `A₄ ~ 5·Beta(1,2)`, `A₅ ~ Exp(1)`.
#[derive(Debug, Clone)]
pub struct Section42Sampler {
    mixing: [[f64; 5]; 5],
    normal: Normal<f64>,
    triangular: Triangular<f64>,
    beta: Beta<f64>,
    exp: Exp<f64>,
}

impl Section42Sampler {
    pub fn new() -> Self {
        Self::with_mixing(SECTION42_MIXING)
    }

    pub fn with_mixing(mixing: [[f64; 5]; 5]) -> Self {
        Self {
            mixing,
            normal: Normal::new(0.0, SECTION42_NORMAL_STD).expect("valid normal"),
            triangular: Triangular::new(-1.0, 8.0, 3.5).expect("valid triangular"),
            beta: Beta::new(1.0, 2.0).expect("valid beta"),
            exp: Exp::new(1.0).expect("valid exponential"),
        }
    }

    pub fn mixing(&self) -> &[[f64; 5]; 5] {
        &self.mixing
    }
}

impl Default for Section42Sampler {
    fn default() -> Self {
        Self::new()
    }
}

impl BaseSampler for Section42Sampler {
    fn dim(&self) -> usize {
        5
    }

    fn name(&self) -> &str {
        "section42"
    }

    fn draw(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let a = [
            rng.random_range(5.0..10.0),
            self.normal.sample(rng),
            self.triangular.sample(rng),
            5.0 * self.beta.sample(rng),
            self.exp.sample(rng),
        ];
        for (o, row) in out.iter_mut().zip(&self.mixing) {
            *o = row.iter().zip(&a).map(|(w, a)| w * a).sum();
        }
    }
}

/// The built-in mixture sampler.
pub fn section42_sampler() -> Section42Sampler {
    Section42Sampler::new()
}

#[derive(Debug, Clone)]
pub struct GaussianSampler(pub GaussianSpec);

impl BaseSampler for GaussianSampler {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn name(&self) -> &str {
        "gaussian"
    }

    fn draw(&self, rng: &mut StreamRng, out: &mut [f64]) {
        let mut z = vec![0.0; self.0.dim()];
        self.0.draw_into(rng, &mut z, out);
    }
}

#[derive(Debug, Clone)]
pub struct ConstantSampler(pub Vec<f64>);

impl BaseSampler for ConstantSampler {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn name(&self) -> &str {
        "constant"
    }

    fn draw(&self, _rng: &mut StreamRng, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// Mean of `n` fresh draws of `U`.
pub fn sample_empirical_mean(base: &dyn BaseSampler, n: usize, rng: &mut StreamRng) -> Vec<f64> {
    assert!(n >= 1, "empirical mean needs at least one draw");
    let p = base.dim();
    let mut acc = vec![0.0; p];
    let mut u = vec![0.0; p];
    for _ in 0..n {
        base.draw(rng, &mut u);
        for (a, x) in acc.iter_mut().zip(&u) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// Estimated mean and covariance of `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean_hat: Vec<f64>,
    pub cov_hat: CovMatrix,
    pub n_mean: usize,
    pub n_cov: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MomentOptions {
    pub n_mean: usize,
    pub n_cov: usize,
    /// Take the mean from the covariance sample (then `n_mean` is ignored).
    pub shared_sample: bool,
}

impl MomentOptions {
    /// One sample of size `n` for both moments.
    pub fn shared(n: usize) -> Self {
        Self { n_mean: n, n_cov: n, shared_sample: true }
    }
}

const JITTER_LEVELS: [f64; 3] = [1e-12, 1e-10, 1e-8];

/// Validates a sample covariance, adding `ε·mean(diag)·I` for increasing `ε` if needed.
fn covariance_with_jitter(s: DMatrix<f64>) -> Result<CovMatrix> {
    let first = match CovMatrix::new(s.clone()) {
        Ok(c) => return Ok(c),
        Err(e) => e,
    };
    let p = s.nrows();
    let level = s.trace() / p as f64;
    for eps in JITTER_LEVELS {
        if let Ok(c) = CovMatrix::new(&s + DMatrix::identity(p, p) * (eps * level)) {
            return Ok(c);
        }
    }
    Err(first)
}

fn draw_rows(base: &dyn BaseSampler, n: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let p = base.dim();
    let mut m = DMatrix::zeros(n, p);
    let mut u = vec![0.0; p];
    for i in 0..n {
        base.draw(rng, &mut u);
        for j in 0..p {
            m[(i, j)] = u[j];
        }
    }
    m
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).mean()).collect()
}

/// Sample mean and unbiased sample covariance of `U`.
pub fn estimate_moments(base: &dyn BaseSampler, opts: MomentOptions, stream: Stream) -> Result<MomentEstimate> {
    let p = base.dim();
    if opts.n_cov < p + 1 {
        return Err(Error::TooFewSamples { needed: p + 1, got: opts.n_cov });
    }
    if !opts.shared_sample && opts.n_mean < 1 {
        return Err(Error::TooFewSamples { needed: 1, got: opts.n_mean });
    }
    let cov_rows = draw_rows(base, opts.n_cov, &mut stream.named("cov").rng());
    let cov_means = column_means(&cov_rows);
    let centred = DMatrix::from_fn(opts.n_cov, p, |i, j| cov_rows[(i, j)] - cov_means[j]);
    let s = centred.transpose() * &centred / (opts.n_cov as f64 - 1.0);
    let cov_hat = covariance_with_jitter(s)?;
    let (mean_hat, n_mean) = if opts.shared_sample {
        (cov_means, opts.n_cov)
    } else {
        let mut rng = stream.named("mean").rng();
        (sample_empirical_mean(base, opts.n_mean, &mut rng), opts.n_mean)
    };
    Ok(MomentEstimate { mean_hat, cov_hat, n_mean, n_cov: opts.n_cov })
}

/// Finite-difference step rule for the Gaussian-linear estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `hᵢ = √(Σ̂ᵢᵢ / n)`, the standard deviation of the empirical-mean input.
    StdDev,
    Fixed(f64),
}

/// How the gradient at the estimated mean is obtained.
pub enum GradientSource<'a> {
    Analytic(&'a dyn Fn(&[f64]) -> Vec<f64>),
    FiniteDiff { model: &'a BlackBoxModel, steps: StepRule },
}

/// Gaussian-linear estimate of the Shapley effects of `f(X̂ⁿ)`:
/// the exact effects of the linearization at `mean_hat` under `N(·, cov_hat)`.
///
/// `n` is the size of the empirical mean; it only enters the step rule, since
/// the effects are invariant to rescaling the covariance.
pub fn gla_shapley_estimate(
    gradient: &GradientSource<'_>,
    moments: &MomentEstimate,
    n: usize,
) -> Result<ShapleyVector> {
    let center = &moments.mean_hat;
    let grad = match gradient {
        GradientSource::Analytic(g) => g(center),
        GradientSource::FiniteDiff { model, steps } => {
            let h = match steps {
                StepRule::StdDev => {
                    StepVector::new(moments.cov_hat.variances().iter().map(|v| (v / n as f64).sqrt()).collect())?
                }
                StepRule::Fixed(h) => StepVector::uniform(center.len(), *h)?,
            };
            finite_diff_gradient(model, center, &h)?
        }
    };
    let surrogate: LinearModel = taylor_linear(&grad, center, 0.0)?;
    shapley_linear(&surrogate, &moments.cov_hat)
}

/// Gaussian law with the estimated mean and covariance scaled by `1/n`.
pub fn gaussian_surrogate(moments: &MomentEstimate, n: usize) -> Result<GaussianSpec> {
    GaussianSpec::new(DVector::from_column_slice(&moments.mean_hat), moments.cov_hat.scaled(1.0 / n as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BuiltinModel;

    /// Means and covariance of `U` from the base laws' closed-form moments.
    fn analytic_moments() -> (Vec<f64>, DMatrix<f64>) {
        let means = [7.5, 0.0, 3.5, 5.0 / 3.0, 1.0];
        // U(5,10): 25/12; N(0,4): 4; Tri(-1,8,3.5): (a²+b²+c²-ab-ac-bc)/18; 5·Beta(1,2): 25/18; Exp(1): 1
        let tri = (1.0 + 64.0 + 12.25 + 8.0 + 3.5 - 28.0) / 18.0;
        let vars = [25.0 / 12.0, 4.0, tri, 25.0 / 18.0, 1.0];
        let m = DMatrix::from_fn(5, 5, |i, j| SECTION42_MIXING[i][j]);
        let mu = (0..5).map(|i| (0..5).map(|j| m[(i, j)] * means[j]).sum()).collect();
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&vars));
        (mu, &m * d * m.transpose())
    }

    #[test]
    fn fourth_component_mean() {
        let (mu, _) = analytic_moments();
        assert!((mu[3] - 50.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sampler_means_match_analytic() {
        let (mu, cov) = analytic_moments();
        let base = section42_sampler();
        let n = 1_000_000;
        let mut rng = Stream::new(1).rng();
        let m = sample_empirical_mean(&base, n, &mut rng);
        for i in 0..5 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((m[i] - mu[i]).abs() < 5.0 * se, "component {i}: {} vs {}", m[i], mu[i]);
        }
    }

    #[test]
    fn zeroed_mixing_row_is_constant() {
        let mut mix = SECTION42_MIXING;
        mix[2] = [0.0; 5];
        let base = Section42Sampler::with_mixing(mix);
        let mut rng = Stream::new(2).rng();
        let mut u = [0.0; 5];
        for _ in 0..100 {
            base.draw(&mut rng, &mut u);
            assert_eq!(u[2], 0.0);
        }
    }

    #[test]
    fn empirical_mean_basics() {
        let c = ConstantSampler(vec![1.5, -2.0]);
        let mut rng = Stream::new(3).rng();
        assert_eq!(sample_empirical_mean(&c, 17, &mut rng), vec![1.5, -2.0]);
        let base = section42_sampler();
        let mut a = Stream::new(4).rng();
        let mut b = Stream::new(4).rng();
        let mut single = [0.0; 5];
        base.draw(&mut b, &mut single);
        assert_eq!(sample_empirical_mean(&base, 1, &mut a), single.to_vec());
    }

    #[test]
    fn empirical_mean_spread_scales_with_root_n() {
        let (_, cov) = analytic_moments();
        let base = section42_sampler();
        let n = 10_000;
        let reps: Vec<Vec<f64>> =
            (0..200).map(|r| sample_empirical_mean(&base, n, &mut Stream::new(5).child(r).rng())).collect();
        for i in 0..5 {
            let xs: Vec<f64> = reps.iter().map(|r| r[i]).collect();
            let mean = xs.iter().sum::<f64>() / 200.0;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
            let expected = (cov[(i, i)] / n as f64).sqrt();
            assert!((sd / expected - 1.0).abs() < 0.3, "component {i}: {sd} vs {expected}");
        }
    }

    #[test]
    fn gaussian_base_covariance_within_five_se() {
        let cov = CovMatrix::from_rows(&[vec![2.0, 0.5, 0.0], vec![0.5, 1.0, -0.3], vec![0.0, -0.3, 0.5]]).unwrap();
        let spec = GaussianSpec::from_parts(&[1.0, 2.0, 3.0], cov.clone()).unwrap();
        let n = 100_000;
        let est = estimate_moments(&GaussianSampler(spec), MomentOptions::shared(n), Stream::new(6)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let se = ((cov.get(i, i) * cov.get(j, j) + cov.get(i, j).powi(2)) / n as f64).sqrt();
                assert!((est.cov_hat.get(i, j) - cov.get(i, j)).abs() < 5.0 * se);
            }
        }
    }

    #[test]
    fn degenerate_base_fails_after_jitter() {
        let r = estimate_moments(&ConstantSampler(vec![1.0, 2.0]), MomentOptions::shared(50), Stream::new(7));
        assert!(matches!(r, Err(Error::NotPositiveDefinite { .. })));
        let r = estimate_moments(&ConstantSampler(vec![1.0, 2.0]), MomentOptions::shared(2), Stream::new(7));
        assert!(matches!(r, Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn shared_flag_uses_covariance_sample() {
        let base = section42_sampler();
        let shared = estimate_moments(&base, MomentOptions::shared(200), Stream::new(8)).unwrap();
        let rows = draw_rows(&base, 200, &mut Stream::new(8).named("cov").rng());
        assert_eq!(shared.mean_hat, column_means(&rows));
        let split =
            estimate_moments(&base, MomentOptions { n_mean: 300, n_cov: 200, shared_sample: false }, Stream::new(8))
                .unwrap();
        assert_eq!(split.cov_hat, shared.cov_hat);
        assert_ne!(split.mean_hat, shared.mean_hat);
        assert_eq!(split.n_mean, 300);
    }

    fn fixed_moments(mean: Vec<f64>, cov: CovMatrix) -> MomentEstimate {
        MomentEstimate { mean_hat: mean, cov_hat: cov, n_mean: 1, n_cov: 1 }
    }

    #[test]
    fn gla_examples() {
        let cov = CovMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let mu = vec![1.0, -3.0];
        let grad = |x: &[f64]| BuiltinModel::Sqnorm { dim: 2 }.gradient(x);
        let est = gla_shapley_estimate(&GradientSource::Analytic(&grad), &fixed_moments(mu.clone(), cov.clone()), 100)
            .unwrap();
        let direct = shapley_linear(&LinearModel::new(0.0, vec![2.0, -6.0]), &cov).unwrap();
        assert_eq!(est, direct);

        let lin = |_: &[f64]| vec![0.5, 1.0];
        let a = gla_shapley_estimate(&GradientSource::Analytic(&lin), &fixed_moments(mu, cov.clone()), 10).unwrap();
        let b = gla_shapley_estimate(&GradientSource::Analytic(&lin), &fixed_moments(vec![9.0, 9.0], cov.clone()), 10)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a, shapley_linear(&LinearModel::new(0.0, vec![0.5, 1.0]), &cov).unwrap());

        let grad5 = |x: &[f64]| BuiltinModel::Sqnorm { dim: 5 }.gradient(x);
        let sym = gla_shapley_estimate(
            &GradientSource::Analytic(&grad5),
            &fixed_moments(vec![1.0; 5], CovMatrix::identity(5)),
            1,
        )
        .unwrap();
        assert!(sym.max_abs_diff(&[0.2; 5]) < 1e-12);

        let zero = gla_shapley_estimate(&GradientSource::Analytic(&grad), &fixed_moments(vec![0.0, 0.0], cov), 1);
        assert!(matches!(zero, Err(Error::ZeroGradient(_))));
    }

    #[test]
    fn gla_scale_immaterial_and_fd_agreement() {
        let base = section42_sampler();
        let n = 1000;
        let m = estimate_moments(&base, MomentOptions::shared(n), Stream::new(9)).unwrap();
        let grad = |x: &[f64]| BuiltinModel::Sqnorm { dim: 5 }.gradient(x);
        let analytic = gla_shapley_estimate(&GradientSource::Analytic(&grad), &m, n).unwrap();
        let scaled = MomentEstimate { cov_hat: m.cov_hat.scaled(1.0 / n as f64).unwrap(), ..m.clone() };
        let rescaled = gla_shapley_estimate(&GradientSource::Analytic(&grad), &scaled, n).unwrap();
        assert!(rescaled.max_abs_diff(&analytic.values) < 1e-12);

        let f = BuiltinModel::Sqnorm { dim: 5 }.black_box();
        let fd = gla_shapley_estimate(&GradientSource::FiniteDiff { model: &f, steps: StepRule::Fixed(1e-3) }, &m, n)
            .unwrap();
        assert!(fd.max_abs_diff(&analytic.values) < 1e-6);
        let fd_sd =
            gla_shapley_estimate(&GradientSource::FiniteDiff { model: &f, steps: StepRule::StdDev }, &m, n).unwrap();
        assert!(fd_sd.max_abs_diff(&analytic.values) < 1e-6);
    }
}
