//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. The variants
//! are grouped by the stage of the pipeline that produced them so that
//! callers (in particular the CLI) can map failures onto exit codes without
//! string matching.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for simulation, estimation and reporting.
#[derive(Debug, Error)]
pub enum Error {
    /// A quantity was requested outside its mathematical domain
    /// (e.g. a local-field argument that leaves the admissible set).
    #[error("domain error: {0}")]
    Domain(String),

    /// The Euler scheme produced a non-finite state. The step index refers
    /// to the fine simulation grid, not the observation grid.
    #[error("simulation diverged at fine step {step}: {detail}")]
    SimulationDiverged { step: usize, detail: String },

    /// A dataset file could not be parsed. Line numbers are 1-based and
    /// include the header line.
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    /// Structurally valid input that violates a documented invariant
    /// (mismatched dimensions, non-increasing times, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Evaluation of the quasi-likelihood (or a derived quantity) failed at
    /// a specific observation index.
    #[error("evaluation failed at observation {index}: {detail}")]
    Evaluation { index: usize, detail: String },

    /// An argument violated a precondition that is not tied to a dataset
    /// (empty sample sets, non-positive tolerances, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration file or option set is inconsistent.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// An optimizer failed in a way that cannot be reported as a
    /// non-converged result (non-finite objective, singular system that
    /// ridge damping could not repair, ...).
    #[error("optimization failed: {0}")]
    Optimization(String),

    /// The statistical model carries no information about the parameter,
    /// so estimation is meaningless (e.g. volatility does not depend on
    /// the parameter).
    #[error("model not identifiable: {0}")]
    NotIdentifiable(String),

    /// A Monte Carlo study could not produce a single successful
    /// replication at some sample size.
    #[error("study failed at n = {n}: {detail}")]
    Study { n: usize, detail: String },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand used by internal checks.
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Shorthand used by internal checks.
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Shorthand used by internal checks.
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
