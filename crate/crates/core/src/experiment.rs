//! Seeded Monte Carlo studies: replicate the simulate → estimate →
//! classify pipeline over a grid of observation counts and aggregate the
//! results into a report with per-coordinate statistics and
//! model-selection rates.
//!
//! Determinism contract: every replication seed is a pure function of
//! `(master_seed, n, index)`, records are sorted before aggregation, and
//! serialized reports exclude wall-clock times — so reports are
//! byte-identical for a fixed configuration regardless of how many
//! workers execute the replications.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::RateSpec;
use crate::model::{simulate_observation, simulate_paths, ModelSpec};
use crate::optim::{
    penalized_qmle, qbe, qmle, EstimationResult, LqaOptions, McmcOptions, Method, NewtonOptions,
};
use crate::penalty::{PenaltySpec, SupportPartition};
use crate::seed::derive_seed;

/// Decorrelates the MCMC random stream from the path-simulation seed.
const QBE_STREAM: u64 = 0x5bd1_e995_9e37_79b9;

/// How an estimated zero set relates to the true one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionClass {
    /// Zero set strictly contains the truth: too many deletions.
    Under,
    /// Zero set strictly contained in the truth: too few deletions.
    Over,
    /// Zero sets coincide.
    Exact,
    /// Neither inclusion holds.
    Mixed,
}

/// Classifies the zero set of `theta_hat` against the true partition:
/// `Exact` when the sets coincide, `Under`/`Over` when the estimated
/// zero set strictly contains / is strictly contained in the true one,
/// `Mixed` otherwise. Zeros are exact comparisons — the penalized solver
/// produces literal zeros.
pub fn classify_selection(
    theta_hat: &DVector<f64>,
    truth: &SupportPartition,
) -> Result<SelectionClass> {
    if theta_hat.len() != truth.p() {
        return Err(Error::argument(
            "estimate and support partition must share the dimension",
        ));
    }
    let mut superset = true; // estimated zeros ⊇ true zeros
    let mut subset = true; // estimated zeros ⊆ true zeros
    let true_zero: Vec<bool> = {
        let mut flags = vec![false; truth.p()];
        for &j in truth.zero() {
            flags[j] = true;
        }
        flags
    };
    for j in 0..truth.p() {
        let est_zero = theta_hat[j] == 0.0;
        if true_zero[j] && !est_zero {
            superset = false;
        }
        if est_zero && !true_zero[j] {
            subset = false;
        }
    }
    Ok(match (superset, subset) {
        (true, true) => SelectionClass::Exact,
        (true, false) => SelectionClass::Under,
        (false, true) => SelectionClass::Over,
        (false, false) => SelectionClass::Mixed,
    })
}

/// Full study configuration. The default reproduces the benchmark
/// setting: ten covariates, horizon 1, true parameter
/// `(0,1,0,1,2,0,1,1,1,0)`, bridge penalty, observation counts
/// `{1000, 2000, 3000, 10000}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub theta_star: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub penalty: PenaltySpec,
    /// Normalizing-rate exponents; `None` means `n^{-1/2}` per
    /// coordinate.
    #[serde(default)]
    pub rates: Option<RateSpec>,
    pub master_seed: u64,
    /// Estimators to run, in order, without duplicates.
    pub estimators: Vec<Method>,
    /// Euler refinement factor between consecutive observations.
    pub refinement: usize,
    /// Worker threads; `0` uses the process-wide default pool. Excluded
    /// from serialized report echoes: results do not depend on it, and
    /// reports must be byte-identical across worker counts.
    #[serde(skip_serializing, default)]
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSpec::sin_exp(10),
            theta_star: vec![0.0, 1.0, 0.0, 1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.0],
            n_grid: vec![1_000, 2_000, 3_000, 10_000],
            replications: 300,
            penalty: PenaltySpec::bridge_default(),
            rates: None,
            master_seed: 42,
            estimators: vec![Method::Qmle, Method::Penalized],
            refinement: 10,
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.penalty.validate()?;
        if self.replications == 0 {
            return Err(Error::validation("need at least one replication"));
        }
        if self.theta_star.len() != self.model.p {
            return Err(Error::validation(
                "theta* dimension must match the model",
            ));
        }
        let star = DVector::from_vec(self.theta_star.clone());
        if !self.model.in_closed_box(&star) {
            return Err(Error::validation(
                "theta* must lie in the closed parameter box",
            ));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation(
                "the n grid must be nonempty and strictly increasing",
            ));
        }
        if self.estimators.is_empty() {
            return Err(Error::validation("configure at least one estimator"));
        }
        for (i, m) in self.estimators.iter().enumerate() {
            if self.estimators[..i].contains(m) {
                return Err(Error::validation(format!(
                    "estimator {m} listed more than once"
                )));
            }
        }
        if self.refinement == 0 {
            return Err(Error::validation("refinement must be at least 1"));
        }
        let rates = self.rate_spec();
        rates.validate()?;
        if rates.p() != self.model.p {
            return Err(Error::validation(
                "rate exponents must match the model dimension",
            ));
        }
        Ok(())
    }

    /// Effective rate specification (the `n^{-1/2}` default when unset).
    pub fn rate_spec(&self) -> RateSpec {
        self.rates
            .clone()
            .unwrap_or_else(|| RateSpec::isotropic(self.model.p))
    }

    pub fn theta_star_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.theta_star.clone())
    }

    /// True support partition induced by `theta_star`.
    pub fn truth(&self) -> SupportPartition {
        SupportPartition::from_theta(&self.theta_star_vector())
    }
}

/// Outcome of one estimator inside one replication. Exactly one of
/// `result`/`error` is present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateOutcome {
    pub result: Option<EstimationResult>,
    pub error: Option<String>,
    pub selection: Option<SelectionClass>,
}

/// One simulate → estimate → classify cell of the study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub index: usize,
    /// Derived seed, a pure function of `(master_seed, n, index)`.
    pub seed: u64,
    pub estimates: BTreeMap<Method, EstimateOutcome>,
    /// Wall-clock time; excluded from serialized reports.
    #[serde(skip, default)]
    pub wall_time: Duration,
}

/// Runs one replication. Estimator failures are recorded in the
/// returned record, not raised; only simulation failures propagate.
pub fn run_replication(
    config: &ExperimentConfig,
    n: usize,
    index: usize,
) -> Result<ReplicationRecord> {
    if index >= config.replications {
        return Err(Error::argument(format!(
            "replication index {index} exceeds the configured count {}",
            config.replications
        )));
    }
    let started = Instant::now();
    let seed = derive_seed(config.master_seed, n, index);
    let theta_star = config.theta_star_vector();
    let truth = config.truth();
    let rates = config.rate_spec();
    let paths = simulate_paths(&config.model, n, config.refinement, seed)?;
    let ds = simulate_observation(&config.model, &theta_star, &paths)?;
    let mut estimates = BTreeMap::new();
    let mut qmle_hat: Option<DVector<f64>> = None;
    for &method in &config.estimators {
        let attempt: Result<EstimationResult> = match method {
            Method::Qmle => qmle(&ds, &config.model, None, &NewtonOptions::default()),
            Method::Penalized => penalized_qmle(
                &ds,
                &config.model,
                &config.penalty,
                &rates,
                qmle_hat.as_ref(),
                &LqaOptions::default(),
            ),
            Method::Qbe => {
                let opts = McmcOptions {
                    seed: seed ^ QBE_STREAM,
                    ..McmcOptions::default()
                };
                qbe(&ds, &config.model, None, &opts)
            }
        };
        let outcome = match attempt {
            Ok(result) => {
                if method == Method::Qmle {
                    qmle_hat = Some(result.theta_hat.clone());
                }
                let selection = classify_selection(&result.theta_hat, &truth)?;
                EstimateOutcome {
                    result: Some(result),
                    error: None,
                    selection: Some(selection),
                }
            }
            Err(err) => EstimateOutcome {
                result: None,
                error: Some(err.to_string()),
                selection: None,
            },
        };
        estimates.insert(method, outcome);
    }
    Ok(ReplicationRecord {
        n,
        index,
        seed,
        estimates,
        wall_time: started.elapsed(),
    })
}

/// Selection-rate block with binomial Monte Carlo standard errors. The
/// `under`/`over` rates are inclusive (an exact selection is both an
/// under- and an over-inclusion), so `exact <= min(under, over)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionRates {
    pub under: f64,
    pub over: f64,
    pub exact: f64,
    pub mixed: f64,
    pub under_se: f64,
    pub over_se: f64,
    pub exact_se: f64,
    pub mixed_se: f64,
}

/// Aggregated statistics of one estimator at one observation count.
/// Cells are computed over the converged replications only; failures
/// (errors and non-convergence alike) show up in `failure_rate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    /// Replications requested.
    pub requested: usize,
    /// Converged replications contributing to the cells.
    pub used: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// Per-coordinate means; absent when nothing converged.
    pub mean: Option<Vec<f64>>,
    /// Per-coordinate sample standard deviations; absent below two
    /// contributing replications.
    pub sd: Option<Vec<f64>>,
    /// Per-coordinate frequency of an exact zero.
    pub zero_probability: Option<Vec<f64>>,
    pub selection: Option<SelectionRates>,
}

/// Study results for one observation count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub estimators: BTreeMap<Method, EstimatorSummary>,
}

/// Aggregated study output: summary cells, the configuration echo, and
/// every replication record (with its derived seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub per_n: BTreeMap<usize, NSummary>,
    pub records: Vec<ReplicationRecord>,
    /// Total wall-clock time; excluded from serialized reports.
    #[serde(skip, default)]
    pub total_runtime: Duration,
}

fn binomial_se(p: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        (p * (1.0 - p) / count as f64).sqrt()
    }
}

fn summarize_estimator(
    method: Method,
    records: &[ReplicationRecord],
    requested: usize,
    p: usize,
) -> EstimatorSummary {
    let converged: Vec<(&EstimationResult, SelectionClass)> = records
        .iter()
        .filter_map(|rec| rec.estimates.get(&method))
        .filter_map(|out| match (&out.result, out.selection) {
            (Some(res), Some(sel)) if res.converged => Some((res, sel)),
            _ => None,
        })
        .collect();
    let used = converged.len();
    let failures = requested - used;
    if used == 0 {
        return EstimatorSummary {
            requested,
            used,
            failures,
            failure_rate: 1.0,
            mean: None,
            sd: None,
            zero_probability: None,
            selection: None,
        };
    }
    let mut mean = vec![0.0; p];
    let mut zero = vec![0.0; p];
    for (res, _) in &converged {
        for j in 0..p {
            mean[j] += res.theta_hat[j];
            if res.theta_hat[j] == 0.0 {
                zero[j] += 1.0;
            }
        }
    }
    for j in 0..p {
        mean[j] /= used as f64;
        zero[j] /= used as f64;
    }
    let sd = if used >= 2 {
        let mut acc = vec![0.0; p];
        for (res, _) in &converged {
            for j in 0..p {
                let d = res.theta_hat[j] - mean[j];
                acc[j] += d * d;
            }
        }
        Some(
            acc.into_iter()
                .map(|s| (s / (used - 1) as f64).sqrt())
                .collect(),
        )
    } else {
        None
    };
    let count_true = |f: &dyn Fn(SelectionClass) -> bool| {
        converged.iter().filter(|(_, s)| f(*s)).count() as f64 / used as f64
    };
    let under = count_true(&|s| matches!(s, SelectionClass::Under | SelectionClass::Exact));
    let over = count_true(&|s| matches!(s, SelectionClass::Over | SelectionClass::Exact));
    let exact = count_true(&|s| matches!(s, SelectionClass::Exact));
    let mixed = count_true(&|s| matches!(s, SelectionClass::Mixed));
    EstimatorSummary {
        requested,
        used,
        failures,
        failure_rate: failures as f64 / requested as f64,
        mean: Some(mean),
        sd,
        zero_probability: Some(zero),
        selection: Some(SelectionRates {
            under,
            over,
            exact,
            mixed,
            under_se: binomial_se(under, used),
            over_se: binomial_se(over, used),
            exact_se: binomial_se(exact, used),
            mixed_se: binomial_se(mixed, used),
        }),
    }
}

/// Runs the full study: every `(n, index)` cell of the grid, in
/// parallel, aggregated in index order. The report is identical for any
/// worker count. When every replication at some `n` fails outright the
/// study aborts with an error naming that `n`.
pub fn run_study(config: &ExperimentConfig) -> Result<StudyReport> {
    config.validate()?;
    let started = Instant::now();
    let execute = |cfg: &ExperimentConfig| -> Result<Vec<ReplicationRecord>> {
        let mut all = Vec::new();
        for &n in &cfg.n_grid {
            let outcomes: Vec<Result<ReplicationRecord>> = (0..cfg.replications)
                .into_par_iter()
                .map(|index| run_replication(cfg, n, index))
                .collect();
            let mut good = Vec::with_capacity(outcomes.len());
            let mut first_error: Option<Error> = None;
            for outcome in outcomes {
                match outcome {
                    Ok(rec) => good.push(rec),
                    Err(err) => {
                        if first_error.is_none() {
                            first_error = Some(err);
                        }
                    }
                }
            }
            if good.is_empty() {
                let detail = first_error
                    .map(|e| e.to_string())
                    .unwrap_or_else(|| "no replications were produced".into());
                return Err(Error::Study { n, detail });
            }
            all.extend(good);
        }
        Ok(all)
    };
    let mut records = if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Configuration(format!("worker pool: {e}")))?;
        pool.install(|| execute(config))?
    } else {
        execute(config)?
    };
    records.sort_by_key(|rec| (rec.n, rec.index));
    let mut per_n = BTreeMap::new();
    for &n in &config.n_grid {
        let slice: Vec<ReplicationRecord> = records
            .iter()
            .filter(|rec| rec.n == n)
            .cloned()
            .collect();
        let mut estimators = BTreeMap::new();
        for &method in &config.estimators {
            estimators.insert(
                method,
                summarize_estimator(method, &slice, config.replications, config.model.p),
            );
        }
        per_n.insert(n, NSummary { n, estimators });
    }
    Ok(StudyReport {
        schema_version: 1,
        config: config.clone(),
        per_n,
        records,
        total_runtime: started.elapsed(),
    })
}

impl StudyReport {
    /// Serializes the full report as pretty JSON (deterministic bytes:
    /// ordered maps, no clocks).
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::Configuration(format!("report serialization: {e}")))?;
        writeln!(w)?;
        Ok(())
    }

    /// Summary-table CSV: one row per statistic (per coordinate and
    /// estimator where applicable), one column per observation count.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "statistic,estimator,coordinate")?;
        for &n in &self.config.n_grid {
            write!(w, ",n={n}")?;
        }
        writeln!(w)?;
        let cell = |summary: &EstimatorSummary,
                    stat: &str,
                    j: usize|
         -> String {
            let from_vec = |v: &Option<Vec<f64>>| {
                v.as_ref().map(|v| v[j].to_string()).unwrap_or_default()
            };
            match stat {
                "mean" => from_vec(&summary.mean),
                "sd" => from_vec(&summary.sd),
                "zero_probability" => from_vec(&summary.zero_probability),
                _ => String::new(),
            }
        };
        for &method in &self.config.estimators {
            for stat in ["mean", "sd", "zero_probability"] {
                for j in 0..self.config.model.p {
                    write!(w, "{stat},{method},{}", j + 1)?;
                    for &n in &self.config.n_grid {
                        let text = self
                            .per_n
                            .get(&n)
                            .and_then(|s| s.estimators.get(&method))
                            .map(|summary| cell(summary, stat, j))
                            .unwrap_or_default();
                        write!(w, ",{text}")?;
                    }
                    writeln!(w)?;
                }
            }
            let selection_stats: [(&str, fn(&SelectionRates) -> f64); 8] = [
                ("under_rate", |s| s.under),
                ("under_se", |s| s.under_se),
                ("over_rate", |s| s.over),
                ("over_se", |s| s.over_se),
                ("exact_rate", |s| s.exact),
                ("exact_se", |s| s.exact_se),
                ("mixed_rate", |s| s.mixed),
                ("mixed_se", |s| s.mixed_se),
            ];
            for (name, pick) in selection_stats {
                write!(w, "{name},{method},")?;
                for &n in &self.config.n_grid {
                    let text = self
                        .per_n
                        .get(&n)
                        .and_then(|s| s.estimators.get(&method))
                        .and_then(|summary| summary.selection.as_ref())
                        .map(|sel| pick(sel).to_string())
                        .unwrap_or_default();
                    write!(w, ",{text}")?;
                }
                writeln!(w)?;
            }
            write!(w, "failure_rate,{method},")?;
            for &n in &self.config.n_grid {
                let text = self
                    .per_n
                    .get(&n)
                    .and_then(|s| s.estimators.get(&method))
                    .map(|summary| summary.failure_rate.to_string())
                    .unwrap_or_default();
                write!(w, ",{text}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
