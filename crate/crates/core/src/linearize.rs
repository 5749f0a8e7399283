//! Linear surrogates of a black-box model: exact gradient, central finite
//! differences and least-squares regression.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exact::LinearModel;
use crate::gaussian::{sample_marginal, CovMatrix, GaussianSpec, SampleBatch};
use crate::models::BlackBoxModel;
use crate::rng::Stream;

/// Strictly positive per-coordinate finite-difference steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepVector(Vec<f64>);

impl StepVector {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        if let Some(bad) = steps.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidParameter(format!("step {bad} must be positive and finite")));
        }
        Ok(Self(steps))
    }

    pub fn uniform(p: usize, h: f64) -> Result<Self> {
        Self::new(vec![h; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Least-squares fit of an affine model.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub model: LinearModel,
    pub residual_norm: f64,
    /// Ratio of the largest to the smallest `|R_jj|` of the triangular factor.
    pub condition_estimate: f64,
    pub n_samples: usize,
}

fn gradient_is_zero(gradient: &[f64], f_center: f64) -> Option<f64> {
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    (norm <= 1e-14 * (1.0 + f_center.abs())).then_some(norm)
}

/// First-order Taylor surrogate `f(c) + g·(x − c)`.
pub fn taylor_linear(gradient: &[f64], center: &[f64], f_center: f64) -> Result<LinearModel> {
    if gradient.len() != center.len() {
        return Err(Error::DimensionMismatch { expected: center.len(), actual: gradient.len() });
    }
    if let Some(norm) = gradient_is_zero(gradient, f_center) {
        return Err(Error::ZeroGradient(norm));
    }
    let shift: f64 = gradient.iter().zip(center).map(|(g, c)| g * c).sum();
    Ok(LinearModel::new(f_center - shift, gradient.to_vec()))
}

/// Central differences `(f(c + hᵢeᵢ) − f(c − hᵢeᵢ)) / 2hᵢ`; exactly `2p` evaluations.
///
/// Steps are floored at `1e-8·(1 + |cᵢ|)`.
pub fn finite_diff_gradient(model: &BlackBoxModel, center: &[f64], steps: &StepVector) -> Result<Vec<f64>> {
    central_differences(model, center, steps).map(|(g, _)| g)
}

/// Gradient plus the mean of all `2p` evaluations, a second-order estimate of `f(center)`.
fn central_differences(model: &BlackBoxModel, center: &[f64], steps: &StepVector) -> Result<(Vec<f64>, f64)> {
    let p = center.len();
    if model.arity() != p || steps.0.len() != p {
        return Err(Error::DimensionMismatch { expected: model.arity(), actual: p });
    }
    let mut x = center.to_vec();
    let mut grad = Vec::with_capacity(p);
    let mut level = 0.0;
    for i in 0..p {
        let h = steps.0[i].max(1e-8 * (1.0 + center[i].abs()));
        x[i] = center[i] + h;
        let up = model.evaluate(&x)?;
        x[i] = center[i] - h;
        let down = model.evaluate(&x)?;
        x[i] = center[i];
        grad.push((up - down) / (2.0 * h));
        level += (up + down) / (2.0 * p as f64);
    }
    Ok((grad, level))
}

/// Steps equal to the input standard deviations `√Σᵢᵢ`.
pub fn default_steps(cov: &CovMatrix) -> StepVector {
    StepVector(cov.variances().into_iter().map(f64::sqrt).collect())
}

/// Ordinary least squares of `outputs` on `[1, inputs]` via Householder QR.
///
/// Inputs are centred on their column means before factoring and the
/// intercept is restored afterwards.
pub fn fit_linear_regression(batch: &SampleBatch) -> Result<RegressionFit> {
    let y = batch
        .outputs
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("regression needs a batch with outputs".into()))?;
    let (n, p) = (batch.len(), batch.dim());
    if n < p + 1 {
        return Err(Error::TooFewSamples { needed: p + 1, got: n });
    }
    let means: Vec<f64> = (0..p).map(|j| batch.inputs.column(j).mean()).collect();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { batch.inputs[(i, j - 1)] - means[j - 1] });
    let qr = design.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..=p).map(|j| r[(j, j)].abs()).collect();
    let rmax = diag.iter().copied().fold(0.0, f64::max);
    let rmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if !(rmin >= n as f64 * f64::EPSILON * rmax) {
        return Err(Error::RankDeficient { ratio: rmin / rmax });
    }
    let qty = qr.q().transpose() * y;
    let coef = r.solve_upper_triangular(&qty).ok_or(Error::RankDeficient { ratio: rmin / rmax })?;
    let residual: DVector<f64> = y - &design * &coef;
    let slopes: Vec<f64> = coef.iter().skip(1).copied().collect();
    let intercept = coef[0] - slopes.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(RegressionFit {
        model: LinearModel::new(intercept, slopes),
        residual_norm: residual.norm(),
        condition_estimate: rmax / rmin,
        n_samples: n,
    })
}

/// Strategy for [`linearize_pipeline`].
pub enum LinearizeMethod<'a> {
    /// Caller-provided gradient of the model.
    ExactGradient(&'a dyn Fn(&[f64]) -> Vec<f64>),
    /// Central differences; `None` uses [`default_steps`] on the input covariance.
    FiniteDiff(Option<StepVector>),
    /// Least squares on `n_samples` draws of the input.
    Regression { n_samples: usize, stream: Stream },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub model: LinearModel,
    /// Model evaluations spent by this call.
    pub eval_count: u64,
    pub fit: Option<RegressionFit>,
}

/// Linear surrogate of `model` around `spec.mean()`.
pub fn linearize_pipeline(
    model: &BlackBoxModel,
    spec: &GaussianSpec,
    method: LinearizeMethod<'_>,
) -> Result<Linearization> {
    let p = spec.dim();
    if model.arity() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: model.arity() });
    }
    let center = spec.mean().as_slice();
    let before = model.eval_count();
    let (surrogate, fit) = match method {
        LinearizeMethod::ExactGradient(grad) => {
            let f_center = model.evaluate(center)?;
            (taylor_linear(&grad(center), center, f_center)?, None)
        }
        LinearizeMethod::FiniteDiff(steps) => {
            let steps = steps.unwrap_or_else(|| default_steps(spec.cov()));
            // f(center) is estimated from the 2p stencil points, keeping the budget at 2p
            let (g, f_center) = central_differences(model, center, &steps)?;
            (taylor_linear(&g, center, f_center)?, None)
        }
        LinearizeMethod::Regression { n_samples, stream } => {
            if n_samples < p + 1 {
                return Err(Error::TooFewSamples { needed: p + 1, got: n_samples });
            }
            let batch = sample_marginal(spec, n_samples, stream)?;
            let mut ys = Vec::with_capacity(n_samples);
            for i in 0..n_samples {
                ys.push(model.evaluate(&batch.row(i))?);
            }
            let batch = SampleBatch::new(batch.inputs, Some(DVector::from_vec(ys)), batch.seed_tag)?;
            let fit = fit_linear_regression(&batch)?;
            if let Some(norm) = gradient_is_zero(&fit.model.coeffs, fit.model.intercept) {
                return Err(Error::ZeroGradient(norm));
            }
            (fit.model.clone(), Some(fit))
        }
    };
    Ok(Linearization { model: surrogate, eval_count: model.eval_count() - before, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::CovMatrix;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn taylor_examples() {
        let m = taylor_linear(&[1.0, 2.0], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!((m.intercept, m.coeffs.clone()), (0.0, vec![1.0, 2.0]));
        let m = taylor_linear(&[1.0, 1.0], &[1.0, 1.0], 5.0).unwrap();
        assert_eq!(m.intercept, 3.0);
        assert!(matches!(taylor_linear(&[0.0, 0.0], &[1.0, 1.0], 2.0), Err(Error::ZeroGradient(_))));
    }

    #[test]
    fn finite_diff_examples() {
        let sq = BlackBoxModel::new(1, |x| x[0] * x[0]);
        for h in [0.5, 0.1, 1e-3] {
            let g = finite_diff_gradient(&sq, &[0.0], &StepVector::new(vec![h]).unwrap()).unwrap();
            assert_eq!(g[0], 0.0);
        }
        let sin = BlackBoxModel::new(1, |x| x[0].sin());
        let g = finite_diff_gradient(&sin, &[0.0], &StepVector::new(vec![0.1]).unwrap()).unwrap();
        assert!((g[0] - 0.1f64.sin() / 0.1).abs() < 1e-15);
        assert!((g[0] - 0.998_334_2).abs() < 1e-7);
        let cube = BlackBoxModel::new(1, |x| x[0].powi(3));
        for h in [0.1, 0.01, 0.3] {
            let g = finite_diff_gradient(&cube, &[0.0], &StepVector::new(vec![h]).unwrap()).unwrap();
            assert!((g[0] - h * h).abs() <= 4.0 * f64::EPSILON * h * h);
        }
    }

    #[test]
    fn finite_diff_budget_and_errors() {
        let m = BlackBoxModel::new(5, |x| x.iter().sum());
        finite_diff_gradient(&m, &[1.0; 5], &StepVector::uniform(5, 0.1).unwrap()).unwrap();
        assert_eq!(m.eval_count(), 10);
        let bad = BlackBoxModel::new(1, |x| if x[0] > 0.0 { f64::NAN } else { 0.0 });
        assert!(matches!(
            finite_diff_gradient(&bad, &[0.0], &StepVector::uniform(1, 0.1).unwrap()),
            Err(Error::NonFiniteEvaluation(_))
        ));
        assert!(StepVector::new(vec![1.0, 0.0]).is_err());
        assert!(StepVector::new(vec![-1.0]).is_err());
    }

    #[test]
    fn second_order_ratio_for_exp() {
        let f = BlackBoxModel::new(1, |x| x[0].exp());
        let c = 0.3f64;
        let err = |h: f64| {
            let g = finite_diff_gradient(&f, &[c], &StepVector::new(vec![h]).unwrap()).unwrap();
            (g[0] - c.exp()).abs()
        };
        for h in [0.1, 0.05, 0.025] {
            let ratio = err(h) / err(h / 2.0);
            assert!((3.5..=4.5).contains(&ratio), "h={h} ratio={ratio}");
        }
    }

    #[test]
    fn default_step_examples() {
        assert_eq!(default_steps(&CovMatrix::identity(3)).as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(default_steps(&CovMatrix::diagonal(&[4.0, 9.0]).unwrap()).as_slice(), &[2.0, 3.0]);
    }

    fn linear_batch(n: usize, seed: u64) -> SampleBatch {
        let mut rng = Stream::new(seed).rng();
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        SampleBatch::new(x, None, seed).unwrap().with_outputs(|x| 3.0 + 2.0 * x[0] - x[1])
    }

    #[test]
    fn regression_recovers_linear_data() {
        let fit = fit_linear_regression(&linear_batch(10, 1)).unwrap();
        assert!((fit.model.intercept - 3.0).abs() < 1e-10);
        assert!((fit.model.coeffs[0] - 2.0).abs() < 1e-10);
        assert!((fit.model.coeffs[1] + 1.0).abs() < 1e-10);
        assert!(fit.residual_norm < 1e-10);
        assert!(fit.condition_estimate >= 1.0);
    }

    #[test]
    fn regression_errors() {
        let b = linear_batch(2, 2);
        assert!(matches!(fit_linear_regression(&b), Err(Error::TooFewSamples { needed: 3, got: 2 })));
        let mut b = linear_batch(10, 3);
        for i in 0..10 {
            b.inputs[(i, 1)] = 2.0 * b.inputs[(i, 0)];
        }
        let b = b.with_outputs(|x| x[0]);
        assert!(matches!(fit_linear_regression(&b), Err(Error::RankDeficient { .. })));
        let no_y = SampleBatch::new(DMatrix::zeros(5, 1), None, 0).unwrap();
        assert!(fit_linear_regression(&no_y).is_err());
    }

    #[test]
    fn pipeline_methods() {
        let beta = vec![1.5, -0.5, 2.0];
        let f = {
            let b = beta.clone();
            BlackBoxModel::new(3, move |x| 0.7 + x.iter().zip(&b).map(|(x, b)| x * b).sum::<f64>())
        };
        let spec = GaussianSpec::from_parts(&[1.0, 2.0, -1.0], CovMatrix::diagonal(&[1.0, 0.5, 2.0]).unwrap()).unwrap();

        let fd = linearize_pipeline(&f, &spec, LinearizeMethod::FiniteDiff(None)).unwrap();
        assert_eq!(fd.eval_count, 6);
        for (a, b) in fd.model.coeffs.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((fd.model.intercept - 0.7).abs() < 1e-12);

        let reg = linearize_pipeline(&f, &spec, LinearizeMethod::Regression { n_samples: 4, stream: Stream::new(8) })
            .unwrap();
        assert_eq!(reg.eval_count, 4);
        for (a, b) in reg.model.coeffs.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-10);
        }

        let grad = |_: &[f64]| vec![1.5, -0.5, 2.0];
        let ex = linearize_pipeline(&f, &spec, LinearizeMethod::ExactGradient(&grad)).unwrap();
        let direct =
            taylor_linear(&grad(&[]), spec.mean().as_slice(), f.evaluate(spec.mean().as_slice()).unwrap()).unwrap();
        assert_eq!(ex.model, direct);
    }

    proptest! {
        #[test]
        fn central_differences_exact_on_quadratics(
            q in prop::collection::vec(-3.0f64..3.0, 9),
            b in prop::collection::vec(-3.0f64..3.0, 3),
            c in prop::collection::vec(-2.0f64..2.0, 3),
            h in 0.01f64..1.0,
        ) {
            let (qq, bb) = (q.clone(), b.clone());
            let f = BlackBoxModel::new(3, move |x| {
                let mut v = 0.5;
                for i in 0..3 {
                    v += bb[i] * x[i];
                    for j in 0..3 {
                        v += qq[3 * i + j] * x[i] * x[j];
                    }
                }
                v
            });
            let g = finite_diff_gradient(&f, &c, &StepVector::uniform(3, h).unwrap()).unwrap();
            for i in 0..3 {
                let exact = b[i] + (0..3).map(|j| (q[3 * i + j] + q[3 * j + i]) * c[j]).sum::<f64>();
                prop_assert!((g[i] - exact).abs() <= 1e-9 * (1.0 + exact.abs()));
            }
        }

        #[test]
        fn residual_orthogonal_to_design(seed in any::<u64>(), n in 6usize..40) {
            let mut rng = Stream::new(seed).rng();
            let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
            let batch = SampleBatch::new(x, None, 0).unwrap()
                .with_outputs(|x| (x[0] * 3.0).sin() + x[1] * x[2] + x[2]);
            let fit = fit_linear_regression(&batch).unwrap();
            let y = batch.outputs.as_ref().unwrap();
            let resid: Vec<f64> = (0..n).map(|i| y[i] - fit.model.eval(&batch.row(i))).collect();
            for col in 0..=3 {
                let dot: f64 = (0..n)
                    .map(|i| if col == 0 { 1.0 } else { batch.inputs[(i, col - 1)] } * resid[i])
                    .sum();
                prop_assert!(dot.abs() <= 1e-8 * y.norm());
            }
        }
    }
}
