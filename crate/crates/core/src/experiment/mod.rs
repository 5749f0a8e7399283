//! Config-driven experiment runs producing plot-ready tables.

pub mod config;
pub mod output;
pub mod runners;

pub use config::{
    AcceptanceParams, EmpiricalParams, ExperimentConfig, ExperimentKind, KnnParams, Method, SamplerConfig, Threads,
};
pub use output::{sidecar_path, write_outputs, ResultRow, ResultTable};
pub use runners::{run_custom, run_empirical42, run_exact, run_experiment, run_fig1, run_remark1};
