//! End-to-end protocol: populations, meta-training with hidden-size
//! selection, few-shot evaluation against the GP baseline, and reporting.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod output;

pub use config::{ExperimentConfig, Problem, SweepConfig, CONFIG_KEYS};
pub use experiment::{
    audit_leakage, evaluate_model, generate_problem_data, mean_predictor_nmse, run_experiment,
    sample_roles, train_hidden_sizes, ExperimentOutcome, GpFitLog, HiddenCandidate, Method,
    ProblemData, ResultRecord, TestStructure,
};
pub use metrics::{mean_std, nmse, population_sigma, select_hidden};
pub use output::{emit_outputs, read_results_csv, render_chart, run_sweep, SummaryRow, SweepOutcome};
