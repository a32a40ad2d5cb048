//! Batch front end: problem files in, reports and sample tables out.

pub mod problem;
pub mod report;
pub mod run;
pub mod samples;

pub use problem::ProblemFile;
pub use report::RunReport;
pub use run::{run_file, run_problem, RunOptions, RunOutcome};

/// Anything that stops a run before a report exists. All map to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Output(String),
    #[error(transparent)]
    Core(#[from] genfam::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
