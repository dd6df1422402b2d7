//! Experiment driver behind the `dccdi` binary.

mod commands;
mod config;
mod gradcheck;

pub use commands::{
    ablate_dim, eval, evaluate_method, fit, gen_data, gradcheck, train, train_on, EvalOutput, GenDataOutput, TrainOutput,
    ABLATE_CSV_HEADER, EVAL_CSV_HEADER,
};
pub use config::{DataConfig, EvalConfig, ExperimentConfig, Method, Stage1Config, Stage2Config};
pub use gradcheck::{
    cca_fd_gradient, cca_gradient_error, cca_grid, run_suite, CheckResult, SuiteReport, CCA_TOLERANCE,
    GRAPH_TOLERANCE,
};
