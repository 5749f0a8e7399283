use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::empirical::StepRule;
use crate::error::{Error, Result};
use crate::exact::LinearModel;
use crate::gaussian::{CovMatrix, GaussianSpec};
use crate::mc::{OracleParams, PermEstimatorParams};
use crate::models::BuiltinModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig1,
    Remark1,
    Empirical42,
    Custom,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Remark1 => "remark1",
            ExperimentKind::Empirical42 => "empirical42",
            ExperimentKind::Custom => "custom",
        }
    }

    fn default_grid(self) -> Vec<u32> {
        match self {
            ExperimentKind::Fig1 => vec![2, 4, 8, 16, 32],
            ExperimentKind::Remark1 => vec![4, 16, 64],
            ExperimentKind::Empirical42 => vec![100, 1000],
            ExperimentKind::Custom => vec![1],
        }
    }

    fn default_replicates(self) -> usize {
        match self {
            ExperimentKind::Fig1 => 20,
            ExperimentKind::Remark1 => 1,
            ExperimentKind::Empirical42 => 200,
            ExperimentKind::Custom => 1,
        }
    }

    /// Methods emitted when the config does not list any.
    pub fn default_methods(self) -> Vec<Method> {
        use Method::*;
        match self {
            ExperimentKind::Fig1 | ExperimentKind::Custom => vec![Taylor, FiniteDiff, Regression, PermMc],
            ExperimentKind::Remark1 => vec![Analytic, Taylor, Gap, Oracle],
            ExperimentKind::Empirical42 => vec![Gla, Knn],
        }
    }

    fn allowed_methods(self) -> &'static [Method] {
        use Method::*;
        match self {
            ExperimentKind::Fig1 | ExperimentKind::Custom => &[Taylor, FiniteDiff, Regression, PermMc, Oracle],
            ExperimentKind::Remark1 => &[Analytic, Taylor, Gap, Oracle, PermMc],
            ExperimentKind::Empirical42 => &[Gla, Knn],
        }
    }
}

/// Row tag naming how a Shapley vector was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Taylor,
    FiniteDiff,
    Regression,
    PermMc,
    Oracle,
    Gla,
    Knn,
    /// Closed-form effects of the true model.
    Analytic,
    /// `analytic − taylor`.
    Gap,
    /// Closed form for a linear model.
    Exact,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Taylor => "taylor",
            Method::FiniteDiff => "finite_diff",
            Method::Regression => "regression",
            Method::PermMc => "perm_mc",
            Method::Oracle => "oracle",
            Method::Gla => "gla",
            Method::Knn => "knn",
            Method::Analytic => "analytic",
            Method::Gap => "gap",
            Method::Exact => "exact",
        }
    }

    /// Whether repeated runs can differ.
    pub fn is_random(self) -> bool {
        matches!(self, Method::Regression | Method::PermMc | Method::Oracle | Method::Gla | Method::Knn)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Worker count: a number, or `"auto"` for all cores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Threads {
    #[default]
    Auto,
    Count(usize),
}

impl Threads {
    pub fn resolve(self) -> usize {
        match self {
            Threads::Auto => std::thread::available_parallelism().map_or(1, |n| n.get()),
            Threads::Count(n) => n,
        }
    }
}

impl Serialize for Threads {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threads::Auto => s.serialize_str("auto"),
            Threads::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Threads {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("threads must be at least 1")),
            Raw::Count(n) => Ok(Threads::Count(n)),
            Raw::Word(w) if w == "auto" => Ok(Threads::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("threads must be a count or \"auto\", got {w:?}"))),
        }
    }
}

impl std::str::FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("threads must be a positive count or \"auto\", got {s:?}")),
            Ok(n) => Ok(Threads::Count(n)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    /// Neighbours per anchor.
    pub k: usize,
    /// Size of the i.i.d. sample of the empirical mean per estimate.
    pub batch: usize,
    /// Anchors in total, split evenly over the `2^p − 2` nontrivial subsets.
    pub n_tot: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 3, batch: 1000, n_tot: 1000 }
    }
}

impl KnnParams {
    /// Anchors per subset, at least 2.
    pub fn anchors_per_subset(&self, p: usize) -> usize {
        let subsets = (1usize << p).saturating_sub(2).max(1);
        (self.n_tot / subsets).max(2)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerConfig {
    #[default]
    Section42,
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
    },
    Constant {
        value: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalParams {
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Estimate mean and covariance from one sample of size `n`.
    #[serde(default = "yes")]
    pub shared_sample: bool,
}

impl Default for EmpiricalParams {
    fn default() -> Self {
        Self { sampler: SamplerConfig::Section42, shared_sample: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceParams {
    /// Criterion ids to run; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criteria: Option<Vec<String>>,
    /// Replaces the aggregation weight for this subset size by its reciprocal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_weight: Option<usize>,
}

fn yes() -> bool {
    true
}

fn unit() -> f64 {
    1.0
}

fn forty() -> usize {
    40
}

fn std_dev_rule() -> StepRule {
    StepRule::StdDev
}

/// One JSON document describing a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Threads,
    /// Multiplies the permutation estimator's `n_var` and `n_perms`.
    #[serde(default = "unit")]
    pub budget_scale: f64,
    #[serde(default)]
    pub perm: PermEstimatorParams,
    #[serde(default)]
    pub oracle: OracleParams,
    #[serde(default = "forty")]
    pub regression_n: usize,
    #[serde(default = "std_dev_rule")]
    pub step_rule: StepRule,
    #[serde(default)]
    pub knn: KnnParams,
    #[serde(default)]
    pub empirical: EmpiricalParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// When false the `wall_time_ms` column is left empty, making output reproducible byte for byte.
    #[serde(default = "yes")]
    pub record_timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<BuiltinModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub acceptance: AcceptanceParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn for_experiment(kind: ExperimentKind) -> Self {
        Self { experiment: Some(kind), ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fills experiment-dependent defaults and checks every invariant.
    pub fn resolve(mut self, kind: ExperimentKind) -> Result<Self> {
        match self.experiment {
            Some(k) if k != kind => {
                return Err(Error::Config(format!(
                    "config describes experiment {:?} but {:?} was requested",
                    k.tag(),
                    kind.tag()
                )))
            }
            _ => self.experiment = Some(kind),
        }
        let grid = self.n_grid.get_or_insert_with(|| kind.default_grid());
        if grid.is_empty() {
            return Err(Error::Config("n_grid must not be empty".into()));
        }
        if grid.contains(&0) {
            return Err(Error::Config("n_grid entries must be positive".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("n_grid must be strictly ascending, got {grid:?}")));
        }
        if *self.replicates.get_or_insert_with(|| kind.default_replicates()) < 1 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if !(self.budget_scale > 0.0 && self.budget_scale.is_finite()) {
            return Err(Error::Config(format!("budget_scale must be positive, got {}", self.budget_scale)));
        }
        let methods = self.methods.get_or_insert_with(|| kind.default_methods());
        if methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if let Some(m) = methods.iter().find(|m| !kind.allowed_methods().contains(m)) {
            return Err(Error::Config(format!("method {m} is not available for {}", kind.tag())));
        }
        if let StepRule::Fixed(h) = self.step_rule {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!("fixed step must be positive, got {h}")));
            }
        }
        self.perm.validate().map_err(to_config)?;
        self.oracle.validate().map_err(to_config)?;
        if self.knn.k < 2 || self.knn.batch < 10 * self.knn.k || self.knn.n_tot < 1 {
            return Err(Error::Config(format!("knn needs k >= 2 and batch >= 10k, got {:?}", self.knn)));
        }
        if kind == ExperimentKind::Custom {
            self.custom_input()?;
        }
        Ok(self)
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.unwrap_or(ExperimentKind::Custom)
    }

    pub fn grid(&self) -> &[u32] {
        self.n_grid.as_deref().unwrap_or(&[])
    }

    pub fn replicate_count(&self) -> usize {
        self.replicates.unwrap_or(1)
    }

    pub fn method_list(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| self.kind().default_methods())
    }

    /// Permutation budgets after `budget_scale`.
    pub fn scaled_perm(&self) -> PermEstimatorParams {
        self.perm.scaled(self.budget_scale)
    }

    pub fn covariance(&self) -> Result<CovMatrix> {
        let rows = self.cov.as_ref().ok_or_else(|| Error::Config("missing key \"cov\"".into()))?;
        CovMatrix::from_rows(rows)
    }

    /// Model, and Gaussian input with the configured mean (zero if absent) and covariance.
    pub fn custom_input(&self) -> Result<(BuiltinModel, GaussianSpec)> {
        let model = self.model.clone().ok_or_else(|| Error::Config("missing key \"model\"".into()))?;
        let cov = self.covariance()?;
        let mean = self.mean.clone().unwrap_or_else(|| vec![0.0; cov.dim()]);
        if model.arity() != cov.dim() {
            return Err(Error::DimensionMismatch { expected: cov.dim(), actual: model.arity() });
        }
        Ok((model, GaussianSpec::from_parts(&mean, cov)?))
    }

    /// Linear model and covariance for the closed-form computation.
    pub fn linear_input(&self) -> Result<(LinearModel, CovMatrix)> {
        match &self.model {
            Some(BuiltinModel::Linear(m)) => {
                let cov = self.covariance()?;
                if m.dim() != cov.dim() {
                    return Err(Error::DimensionMismatch { expected: cov.dim(), actual: m.dim() });
                }
                Ok((m.clone(), cov))
            }
            Some(other) => {
                Err(Error::Config(format!("closed-form effects need a linear model, got {:?}", other.name())))
            }
            None => Err(Error::Config("missing key \"model\"".into())),
        }
    }
}

fn to_config(e: Error) -> Error {
    Error::Config(e.to_string())
}
