use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind, Method, SamplerConfig};
use super::output::{ResultRow, ResultTable};
use crate::empirical::{
    estimate_moments, gla_shapley_estimate, sample_empirical_mean, section42_sampler, BaseSampler, ConstantSampler,
    GaussianSampler, GradientSource, MomentOptions, StepRule,
};
use crate::error::{Error, Result};
use crate::exact::{shapley_linear, shapley_linear_blockwise, ShapleyVector, DEFAULT_BLOCK_TOL, EXACT_TOL};
use crate::gaussian::{CovMatrix, GaussianSpec, SampleBatch};
use crate::linearize::{linearize_pipeline, LinearizeMethod, StepVector};
use crate::mc::{attach_outputs, knn_shapley, shapley_perm_mc, shapley_subset_oracle};
use crate::models::{fig1_input, remark1_input, remark1_shapley, BuiltinModel};
use crate::rng::Stream;

/// Tolerance on `|Σ η − 1|` for Monte-Carlo rows; violations are reported, not fatal.
pub const MC_SUM_TOL: f64 = 0.1;

/// Output of one method within a work unit.
struct Cell {
    method: Method,
    shapley: ShapleyVector,
    eval_count: Option<u64>,
    elapsed_ms: f64,
    metric: Option<f64>,
}

fn timed(method: Method, f: impl FnOnce() -> Result<(ShapleyVector, Option<u64>)>) -> Result<Cell> {
    let start = Instant::now();
    let (shapley, eval_count) = f()?;
    Ok(Cell { method, shapley, eval_count, elapsed_ms: start.elapsed().as_secs_f64() * 1e3, metric: None })
}

fn pool(config: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.resolve())
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))
}

/// Runs `unit` over every `(n, replicate)` pair in the configured pool and
/// assembles the rows in grid order, independent of scheduling.
fn run_grid(
    config: &ExperimentConfig,
    p: usize,
    unit: impl Fn(u32, usize, Stream) -> Result<Vec<Cell>> + Sync,
) -> Result<ResultTable> {
    let kind = config.kind();
    let root = Stream::new(config.seed).named(kind.tag());
    let pairs: Vec<(u32, usize)> =
        config.grid().iter().flat_map(|&n| (0..config.replicate_count()).map(move |r| (n, r))).collect();
    let cells = pool(config)?.install(|| {
        pairs.par_iter().map(|&(n, r)| unit(n, r, root.child(u64::from(n)).child(r as u64))).collect::<Result<Vec<_>>>()
    })?;
    let mut table = ResultTable::new(p);
    for (&(n, replicate), cells) in pairs.iter().zip(cells) {
        for cell in cells {
            let row = ResultRow {
                experiment: kind.tag(),
                method: cell.method,
                n,
                replicate,
                eta: cell.shapley.values,
                std_errors: cell.shapley.std_errors,
                eval_count: cell.eval_count,
                wall_time_ms: config.record_timing.then_some(cell.elapsed_ms),
                metric: cell.metric,
            };
            check_sum(&row, &mut table.warnings);
            table.push(row)?;
        }
    }
    Ok(table)
}

fn check_sum(row: &ResultRow, warnings: &mut Vec<String>) {
    let tol = match row.method {
        Method::Gap => return,
        m if m.is_random() && m != Method::Regression && m != Method::Gla => MC_SUM_TOL,
        _ => EXACT_TOL,
    };
    let err = (row.sum() - 1.0).abs();
    if !(err <= tol) {
        warnings.push(format!(
            "{} {} n={} replicate={}: effects sum to {} (tolerance {tol:e})",
            row.experiment,
            row.method,
            row.n,
            row.replicate,
            row.sum()
        ));
    }
}

/// Shapley effects of each configured linearization of `model` around the input mean,
/// and Monte-Carlo estimates for the model itself.
fn linearization_cells(
    config: &ExperimentConfig,
    model: &BuiltinModel,
    spec: &GaussianSpec,
    stream: Stream,
) -> Result<Vec<Cell>> {
    let grad = |x: &[f64]| model.gradient(x);
    config
        .method_list()
        .into_iter()
        .map(|method| {
            let f = model.black_box();
            let via = |how: LinearizeMethod<'_>| {
                let lin = linearize_pipeline(&f, spec, how)?;
                Ok((shapley_linear(&lin.model, spec.cov())?, Some(lin.eval_count)))
            };
            timed(method, || match method {
                Method::Taylor => via(LinearizeMethod::ExactGradient(&grad)),
                Method::FiniteDiff => via(LinearizeMethod::FiniteDiff(match config.step_rule {
                    StepRule::StdDev => None,
                    StepRule::Fixed(h) => Some(StepVector::uniform(spec.dim(), h)?),
                })),
                Method::Regression => via(LinearizeMethod::Regression {
                    n_samples: config.regression_n,
                    stream: stream.named("regression"),
                }),
                Method::PermMc => {
                    let eta = shapley_perm_mc(&f, spec, &config.scaled_perm(), stream.named("perm_mc"))?;
                    Ok((eta, Some(f.eval_count())))
                }
                Method::Oracle => {
                    let eta = shapley_subset_oracle(&f, spec, &config.oracle, stream.named("oracle"))?;
                    Ok((eta, Some(f.eval_count())))
                }
                other => Err(Error::Config(format!("method {other} does not apply here"))),
            })
        })
        .collect()
}

fn require(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.experiment != Some(kind) || config.n_grid.is_none() {
        return Err(Error::Config(format!("config must be resolved for {} before running", kind.tag())));
    }
    Ok(())
}

/// Four-variable nonlinear model with shrinking Gaussian inputs: the three
/// linearizations and permutation Monte-Carlo at every grid index.
pub fn run_fig1(config: &ExperimentConfig) -> Result<ResultTable> {
    require(config, ExperimentKind::Fig1)?;
    let model = BuiltinModel::Fig1;
    run_grid(config, 4, |n, _, stream| linearization_cells(config, &model, &fig1_input(n), stream))
}

/// The user-supplied model with input `N(mean, cov / n²)`.
pub fn run_custom(config: &ExperimentConfig) -> Result<ResultTable> {
    require(config, ExperimentKind::Custom)?;
    let (model, base) = config.custom_input()?;
    run_grid(config, base.dim(), |n, _, stream| {
        let n = f64::from(n);
        let spec = GaussianSpec::new(base.mean().clone(), base.cov().scaled(1.0 / (n * n))?)?;
        linearization_cells(config, &model, &spec, stream)
    })
}

/// `x₁ + x₂²` under `N(0, I₂/a)` for each `a` in the grid: the analytic effects,
/// those of the linearization at 0, their gap (with `a·‖gap‖∞` as metric) and
/// Monte-Carlo estimates.
pub fn run_remark1(config: &ExperimentConfig) -> Result<ResultTable> {
    require(config, ExperimentKind::Remark1)?;
    let model = BuiltinModel::Remark1;
    run_grid(config, 2, |a, _, stream| {
        let a = f64::from(a);
        let spec = remark1_input(a)?;
        let analytic = ShapleyVector::exact(remark1_shapley(a).to_vec());
        let grad = |x: &[f64]| model.gradient(x);
        let f = model.black_box();
        let lin = linearize_pipeline(&f, &spec, LinearizeMethod::ExactGradient(&grad))?;
        let taylor = shapley_linear(&lin.model, spec.cov())?;
        config
            .method_list()
            .into_iter()
            .map(|method| match method {
                Method::Analytic => timed(method, || Ok((analytic.clone(), None))),
                Method::Taylor => timed(method, || Ok((taylor.clone(), Some(lin.eval_count)))),
                Method::Gap => {
                    let gap: Vec<f64> = analytic.values.iter().zip(&taylor.values).map(|(x, y)| x - y).collect();
                    let sup = gap.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
                    let mut cell = timed(method, || Ok((ShapleyVector::exact(gap), None)))?;
                    cell.metric = Some(a * sup);
                    Ok(cell)
                }
                Method::Oracle | Method::PermMc => {
                    linearization_cells(&method_only(config, method), &model, &spec, stream).map(|mut c| c.remove(0))
                }
                other => Err(Error::Config(format!("method {other} does not apply to remark1"))),
            })
            .collect()
    })
}

fn method_only(config: &ExperimentConfig, method: Method) -> ExperimentConfig {
    ExperimentConfig { methods: Some(vec![method]), ..config.clone() }
}

fn base_sampler(config: &SamplerConfig) -> Result<Box<dyn BaseSampler>> {
    Ok(match config {
        SamplerConfig::Section42 => Box::new(section42_sampler()),
        SamplerConfig::Gaussian { mean, cov } => {
            Box::new(GaussianSampler(GaussianSpec::from_parts(mean, CovMatrix::from_rows(cov)?)?))
        }
        SamplerConfig::Constant { value } => {
            if value.is_empty() {
                return Err(Error::Config("constant sampler needs a value".into()));
            }
            Box::new(ConstantSampler(value.clone()))
        }
    })
}

/// Shapley effects of `f(X̂ⁿ)` for an empirical mean `X̂ⁿ`: Gaussian-linear
/// estimates from one sample of size `n`, and nearest-neighbour estimates from
/// `knn.batch` i.i.d. copies of `X̂ⁿ` with `knn.n_tot` anchors in total. The model is `‖·‖²` unless configured.
pub fn run_empirical42(config: &ExperimentConfig) -> Result<ResultTable> {
    require(config, ExperimentKind::Empirical42)?;
    let base = base_sampler(&config.empirical.sampler)?;
    let p = base.dim();
    let model = config.model.clone().unwrap_or(BuiltinModel::Sqnorm { dim: p });
    if model.arity() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: model.arity() });
    }
    let grad = |x: &[f64]| model.gradient(x);
    run_grid(config, p, |n, _, stream| {
        let n = n as usize;
        config
            .method_list()
            .into_iter()
            .map(|method| match method {
                Method::Gla => timed(method, || {
                    let opts = if config.empirical.shared_sample {
                        MomentOptions::shared(n)
                    } else {
                        MomentOptions { n_mean: n, n_cov: n, shared_sample: false }
                    };
                    let moments = estimate_moments(base.as_ref(), opts, stream.named("gla"))?;
                    Ok((gla_shapley_estimate(&GradientSource::Analytic(&grad), &moments, n)?, Some(0)))
                }),
                Method::Knn => timed(method, || {
                    let f = model.black_box();
                    let mut rng = stream.named("knn").rng();
                    let rows = config.knn.batch;
                    let mut inputs = DMatrix::zeros(rows, p);
                    for i in 0..rows {
                        let x = sample_empirical_mean(base.as_ref(), n, &mut rng);
                        inputs.row_mut(i).copy_from_slice(&x);
                    }
                    let batch = attach_outputs(&f, SampleBatch::new(inputs, None, stream.key())?)?;
                    Ok((knn_shapley(&batch, config.knn.k, config.knn.anchors_per_subset(p))?, Some(f.eval_count())))
                }),
                other => Err(Error::Config(format!("method {other} does not apply to empirical42"))),
            })
            .collect()
    })
}

/// Closed-form effects of the configured linear model under `N(·, cov)`,
/// splitting independent blocks.
pub fn run_exact(config: &ExperimentConfig) -> Result<ResultTable> {
    let (model, cov) = config.linear_input()?;
    let start = Instant::now();
    let eta = shapley_linear_blockwise(&model, &cov, DEFAULT_BLOCK_TOL)?;
    let mut table = ResultTable::new(model.dim());
    let row = ResultRow {
        experiment: "exact",
        method: Method::Exact,
        n: 1,
        replicate: 0,
        eta: eta.values,
        std_errors: None,
        eval_count: None,
        wall_time_ms: config.record_timing.then(|| start.elapsed().as_secs_f64() * 1e3),
        metric: None,
    };
    check_sum(&row, &mut table.warnings);
    table.push(row)?;
    Ok(table)
}

/// Dispatches on the resolved experiment kind.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    match config.kind() {
        ExperimentKind::Fig1 => run_fig1(config),
        ExperimentKind::Remark1 => run_remark1(config),
        ExperimentKind::Empirical42 => run_empirical42(config),
        ExperimentKind::Custom => run_custom(config),
    }
}
