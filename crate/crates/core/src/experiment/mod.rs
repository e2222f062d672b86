//! Training loop with runtime checks of the improvement guarantees, trace
//! verification, and trace export.

mod config;
mod export;
mod train;
mod verify;

pub use config::RunConfig;
pub use export::{
    export_trace, load_trace, read_csv, write_csv, LoadedTrace, TraceFormat, CSV_HEADER,
};
pub use train::{
    run_training, u_beta, LearningTrace, RowDetail, TraceRow, BOUND_TOL, DRIFT_SIGN_TOL,
    IMPROVEMENT_TOL, MARGIN_TOL, MONOTONE_TOL, ORACLE_TOL, VALUE_GAIN_TOL,
};
pub use verify::{
    convergence_tolerance, verify_rows, verify_trace, TraceFailure, VerificationReport,
};
