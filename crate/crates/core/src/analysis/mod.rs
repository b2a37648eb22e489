//! Offline analysis of runs: reference optima, sub-optimality curves and speedups,
//! epoch statistics measured from event logs, and the step-size and feasibility
//! calculators for the three algorithms.

mod curves;
mod epochs;
mod optimum;
mod theory;

pub use curves::{
    curve_to_csv, parse_curve_csv, speedup, suboptimality_curve, time_to_target, CurvePoint,
};
pub use epochs::{epoch_stats, epoch_windows, EpochStats};
pub use optimum::{reference_optimum, ridge_closed_form, Optimum};
pub use theory::{
    check_theorem2, check_theorem3, estimate_constants, stepsize_theorem1, Theorem2Report,
    Theorem3Report, TheoryConstants, RHO_SIGN_NOTE,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalysisError {
    #[error("lambda must be positive for a unique minimizer, got {0}")]
    NonPositiveLambda(f64),
    #[error("no convergence after {iterations} iterations (max |grad| = {grad_inf:e})")]
    NotConverged { iterations: usize, grad_inf: f64 },
    #[error("normal equations are not positive definite")]
    Singular,
    #[error("sub-optimality {value:e} at point {index} is negative; the reference optimum is wrong")]
    NegativeSuboptimality { index: usize, value: f64 },
    #[error("the {0} curve never reaches the target")]
    TargetNotReached(String),
    #[error("workers {0:?} never appear in the log")]
    MissingWorkers(Vec<usize>),
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
    #[error("rho = {rho} is outside ({lo}, 1)")]
    RhoOutOfRange { rho: f64, lo: f64 },
    #[error("curve parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
