//! Penalized quasi-likelihood estimation for volatility regression models.
//!
//! The crate simulates diffusion-type stochastic regression models,
//! evaluates quasi log-likelihoods and their local asymptotic
//! decompositions, solves penalized and unpenalized estimation problems,
//! and runs replicated Monte Carlo studies with deterministic seeding.
//!
//! Modules are layered bottom-up:
//!
//! * [`model`] — model specification, Euler simulation, dataset I/O;
//! * [`likelihood`] — quasi log-likelihood, derivatives, local quadratic
//!   decomposition, limit information and contrast;
//! * [`penalty`] — penalty families, weight rules, regularity-condition
//!   checks;
//! * [`optim`] — Newton-type and MCMC estimators;
//! * [`asymptotics`] — random fields, tail probabilities, moment and
//!   limit-law diagnostics;
//! * [`experiment`] — replicated studies and report generation;
//! * [`stats`], [`seed`], [`error`] — shared utilities.

pub mod asymptotics;
pub mod error;
pub mod experiment;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod penalty;
pub mod seed;
pub mod stats;

pub use asymptotics::{
    field_value, field_value_on, holder_quotient, holder_quotient_on, limit_law_sample,
    moment_estimate, moment_estimate_restricted, moment_samples, pldi_tail_estimate,
    shell_log_supremum, LimitLaw, PldiConfig, TailCurve,
};
pub use error::{Error, Result};
pub use experiment::{
    classify_selection, run_replication, run_study, EstimateOutcome, EstimatorSummary,
    ExperimentConfig, NSummary, ReplicationRecord, SelectionClass, SelectionRates, StudyReport,
};
pub use likelihood::{
    chi0_estimate, fd_gradient, fd_hessian, laq_decompose, limit_contrast, limit_information,
    quasi_hessian, quasi_loglik, quasi_score, LaqDecomposition, LimitInformation, QuasiLikelihood,
    RateSpec,
};
pub use optim::{
    lqa_box_max, newton_box_max, penalized_qmle, qbe, qbe_box, qmle, EstimationResult,
    LqaOptions, LqaOutcome, McmcDiagnostics, McmcOptions, Method, NewtonOptions, NewtonOutcome,
    Objective,
};
pub use penalty::{
    penalized_objective, penalty_value, verify_conditions, ConditionCheck, ConditionReport,
    PenaltyKind, PenaltySpec, SupportPartition, WeightRule,
};
pub use model::{
    load_dataset, save_dataset, simulate_observation, simulate_paths,
    simulate_paths_from_increments, CovariateDiffusion, Dataset, Drift, ModelSpec, PathBundle,
    Provenance, Volatility,
};
