//! Estimators: quasi maximum likelihood, penalized quasi-likelihood via
//! local quadratic approximation, and the quasi-Bayesian posterior mean.
//!
//! All three drive an [`Objective`] — anything exposing a value and
//! closed-form first/second derivatives — so the numeric cores can be
//! exercised on synthetic objectives with known optima, independent of
//! the simulation pipeline.
//!
//! Conventions shared by the solvers:
//!
//! * every iterate stays inside the closed parameter box;
//! * coordinates listed in `clamp_zero` are pinned to exactly `0` and
//!   never enter the linear algebra;
//! * hitting an iteration cap yields `converged = false` on the returned
//!   result — never an error — while non-finite objective values abort.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{QuasiLikelihood, RateSpec};
use crate::model::{Dataset, ModelSpec};
use crate::penalty::{penalty_value, PenaltySpec};
use crate::stats::effective_sample_size;

/// A twice-differentiable objective to maximize.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> Result<f64>;
    fn value_grad_hess(&self, theta: &DVector<f64>)
        -> Result<(f64, DVector<f64>, DMatrix<f64>)>;
}

impl Objective for QuasiLikelihood {
    fn dim(&self) -> usize {
        self.p()
    }

    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        QuasiLikelihood::value(self, theta)
    }

    fn value_grad_hess(
        &self,
        theta: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        QuasiLikelihood::value_score_hessian(self, theta)
    }
}

/// Which estimator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Qmle,
    Penalized,
    Qbe,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Qmle => "qmle",
            Method::Penalized => "penalized",
            Method::Qbe => "qbe",
        };
        f.write_str(s)
    }
}

/// Chain diagnostics attached to quasi-Bayesian results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    /// Acceptance rate over the post-adaptation portion of the chain.
    pub acceptance_rate: f64,
    /// Smallest per-coordinate effective sample size of the kept draws.
    pub ess_min: f64,
    /// Per-coordinate posterior standard deviations.
    pub posterior_sd: Vec<f64>,
}

/// Outcome of one estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: DVector<f64>,
    /// Starting point; recorded because the objective may have several
    /// local maximizers and reproducibility requires knowing which basin
    /// the solver started in.
    pub theta_init: DVector<f64>,
    /// `{j : θ̂_j ≠ 0}`, ascending.
    pub active_set: Vec<usize>,
    pub method: Method,
    pub iterations: usize,
    /// First-order stationarity measure at exit (objective-score norm on
    /// the free coordinates for the Newton solvers; the score norm at the
    /// posterior mean for QBE, where it is informational only).
    pub grad_norm: f64,
    /// Objective value at `theta_hat` (penalized objective for the
    /// penalized method).
    pub objective: f64,
    /// Wall-clock time of the solve. Excluded from serialized output so
    /// that reports are byte-identical across runs.
    #[serde(skip, default)]
    pub wall_time: Duration,
    pub converged: bool,
    /// Present for QBE results.
    pub mcmc: Option<McmcDiagnostics>,
}

impl EstimationResult {
    fn active_set_of(theta: &DVector<f64>) -> Vec<usize> {
        theta
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Damped-Newton options.
#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Iteration cap; exceeding it flags `converged = false`.
    pub max_iter: usize,
    /// Stationarity tolerance, scaled as `grad_tol·(1 + |H|)`.
    pub grad_tol: f64,
    /// Armijo slope factor.
    pub armijo_slope: f64,
    /// Smallest admissible step factor in the backtracking line search.
    pub step_floor: f64,
    /// Initial ridge added to the (negated) Hessian; doubled until the
    /// factorization succeeds.
    pub ridge_init: f64,
    /// Coordinates pinned to exactly zero for the whole solve.
    pub clamp_zero: Vec<usize>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iter: 200,
            grad_tol: 1e-8,
            armijo_slope: 1e-4,
            step_floor: 1e-12,
            ridge_init: 1e-8,
            clamp_zero: Vec::new(),
        }
    }
}

/// Local-quadratic-approximation options for the penalized solver.
#[derive(Debug, Clone)]
pub struct LqaOptions {
    /// Deletion threshold τ: a coordinate whose magnitude falls below it
    /// is set to exactly zero, permanently for the solve.
    pub tau: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Stop when no coordinate moves more than this.
    pub coord_tol: f64,
    /// Options of the inner ridge-corrected Newton solves.
    pub newton: NewtonOptions,
}

impl Default for LqaOptions {
    fn default() -> Self {
        LqaOptions {
            tau: 1e-4,
            max_iter: 500,
            coord_tol: 1e-8,
            newton: NewtonOptions::default(),
        }
    }
}

/// Raw outcome of the box-constrained Newton core.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub theta: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_box(bounds: &[(f64, f64)], theta: &DVector<f64>) -> Result<()> {
    if theta.len() != bounds.len() {
        return Err(Error::argument("theta and box dimension mismatch"));
    }
    for (j, (&t, &(lo, hi))) in theta.iter().zip(bounds).enumerate() {
        if !(t >= lo && t <= hi) {
            return Err(Error::argument(format!(
                "theta[{j}] = {t} outside the box [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

fn clamp_into(bounds: &[(f64, f64)], clamp_zero: &[usize], theta: &mut DVector<f64>) {
    for (t, &(lo, hi)) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(lo, hi);
    }
    for &j in clamp_zero {
        theta[j] = 0.0;
    }
}

/// Gradient on the free coordinates: pinned coordinates and box-active
/// coordinates whose gradient points outward contribute zero.
fn projected_grad_inf_norm(
    bounds: &[(f64, f64)],
    clamp_zero: &[usize],
    theta: &DVector<f64>,
    grad: &DVector<f64>,
) -> f64 {
    let mut worst = 0.0f64;
    'coord: for j in 0..theta.len() {
        for &c in clamp_zero {
            if c == j {
                continue 'coord;
            }
        }
        let (lo, hi) = bounds[j];
        let g = grad[j];
        if (theta[j] <= lo && g < 0.0) || (theta[j] >= hi && g > 0.0) {
            continue;
        }
        worst = worst.max(g.abs());
    }
    worst
}

/// Solves `(−H + μI) x = b` on the free coordinates, doubling the ridge
/// `μ` until the Cholesky factorization succeeds.
fn ridge_solve(
    neg_hess: &DMatrix<f64>,
    rhs: &DVector<f64>,
    free: &[usize],
    ridge_init: f64,
) -> Result<DVector<f64>> {
    let k = free.len();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    for (ri, &r) in free.iter().enumerate() {
        b[ri] = rhs[r];
        for (ci, &c) in free.iter().enumerate() {
            a[(ri, ci)] = neg_hess[(r, c)];
        }
    }
    let scale = a.diagonal().amax().max(1.0);
    let mut mu = ridge_init;
    loop {
        let mut damped = a.clone();
        for i in 0..k {
            damped[(i, i)] += mu;
        }
        if let Some(chol) = Cholesky::new(damped) {
            let x = chol.solve(&b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        mu = if mu == 0.0 { 1e-12 } else { mu * 2.0 };
        if mu > 1e8 * scale {
            return Err(Error::Optimization(
                "Newton system stayed indefinite under ridge damping".into(),
            ));
        }
    }
}

/// Box-constrained damped-Newton ascent with ridge fallback.
///
/// Generic over the objective so synthetic tests can drive it directly;
/// the estimation wrappers adapt it to datasets.
pub fn newton_box_max(
    obj: &impl Objective,
    bounds: &[(f64, f64)],
    theta_init: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonOutcome> {
    if bounds.len() != obj.dim() {
        return Err(Error::argument("box and objective dimension mismatch"));
    }
    check_box(bounds, theta_init)?;
    let free: Vec<usize> = (0..obj.dim())
        .filter(|j| !opts.clamp_zero.contains(j))
        .collect();
    let mut theta = theta_init.clone();
    clamp_into(bounds, &opts.clamp_zero, &mut theta);
    let (mut value, mut grad, mut hess) = obj.value_grad_hess(&theta)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let pg = projected_grad_inf_norm(bounds, &opts.clamp_zero, &theta, &grad);
        if pg <= opts.grad_tol * (1.0 + value.abs()) {
            converged = true;
            break;
        }
        if free.is_empty() {
            converged = true;
            break;
        }
        let neg_hess = -&hess;
        let step_free = ridge_solve(&neg_hess, &grad, &free, opts.ridge_init)?;
        let mut direction = DVector::zeros(obj.dim());
        for (fi, &j) in free.iter().enumerate() {
            direction[j] = step_free[fi];
        }
        // Backtracking: project each trial point into the box, then ask
        // for an Armijo fraction of the first-order improvement.
        let mut t = 1.0f64;
        let mut accepted = false;
        while t >= opts.step_floor {
            let mut trial = &theta + t * &direction;
            clamp_into(bounds, &opts.clamp_zero, &mut trial);
            let displacement = &trial - &theta;
            let slope = grad.dot(&displacement);
            if slope <= 0.0 {
                // Projection neutralized the ascent direction at this
                // step length; shorter steps may re-enter the box.
                t *= 0.5;
                continue;
            }
            let trial_value = obj.value(&trial)?;
            if trial_value >= value + opts.armijo_slope * slope {
                theta = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // No admissible ascent step: report the stationarity as-is.
            break;
        }
        let refreshed = obj.value_grad_hess(&theta)?;
        value = refreshed.0;
        grad = refreshed.1;
        hess = refreshed.2;
    }
    if !converged {
        let pg = projected_grad_inf_norm(bounds, &opts.clamp_zero, &theta, &grad);
        converged = pg <= opts.grad_tol * (1.0 + value.abs());
    }
    let grad_norm = projected_grad_inf_norm(bounds, &opts.clamp_zero, &theta, &grad);
    Ok(NewtonOutcome {
        theta,
        value,
        grad_norm,
        iterations,
        converged,
    })
}

fn prepare_likelihood(ds: &Dataset, model: &ModelSpec) -> Result<QuasiLikelihood> {
    if ds.n < model.p + 1 {
        return Err(Error::validation(format!(
            "estimation needs n >= p + 1 observations (n = {}, p = {})",
            ds.n, model.p
        )));
    }
    let ql = QuasiLikelihood::new(ds, model)?;
    if ql.is_flat() {
        return Err(Error::NotIdentifiable(
            "the volatility does not depend on theta anywhere on the observed path".into(),
        ));
    }
    Ok(ql)
}

/// Quasi maximum likelihood estimator: damped-Newton ascent of `H_n`
/// over the closed parameter box.
///
/// `theta_init` defaults to the box center. A flat objective (volatility
/// free of `θ`) is a non-identifiability error; exceeding the iteration
/// cap is reported through `converged = false`, not an error.
pub fn qmle(
    ds: &Dataset,
    model: &ModelSpec,
    theta_init: Option<&DVector<f64>>,
    opts: &NewtonOptions,
) -> Result<EstimationResult> {
    let started = Instant::now();
    let ql = prepare_likelihood(ds, model)?;
    let init = match theta_init {
        Some(t) => {
            check_box(&model.theta_box, t).map_err(|_| {
                Error::domain("qmle starting point must lie in the closed box".to_string())
            })?;
            t.clone()
        }
        None => model.box_center(),
    };
    let outcome = newton_box_max(&ql, &model.theta_box, &init, opts)?;
    Ok(EstimationResult {
        active_set: EstimationResult::active_set_of(&outcome.theta),
        theta_hat: outcome.theta,
        theta_init: init,
        method: Method::Qmle,
        iterations: outcome.iterations,
        grad_norm: outcome.grad_norm,
        objective: outcome.value,
        wall_time: started.elapsed(),
        converged: outcome.converged,
        mcmc: None,
    })
}

/// Raw outcome of the LQA core.
#[derive(Debug, Clone)]
pub struct LqaOutcome {
    pub theta: DVector<f64>,
    /// Penalized objective at exit.
    pub value: f64,
    /// Stationarity residual of the penalized objective on the surviving
    /// interior coordinates.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Local quadratic approximation for `H(θ) - Σ_j w_j |θ_j|^q`.
///
/// At each iterate the active-coordinate penalty terms are replaced by
/// their quadratic majorant `w_j q |θ_j|^{q-2} θ_j²/2 (+ const)` — an
/// upper bound on the penalty, so each damped step cannot decrease the
/// true penalized objective. Coordinates falling below `tau` are set to
/// exactly zero and never revived within the solve.
pub fn lqa_box_max(
    obj: &impl Objective,
    bounds: &[(f64, f64)],
    weights: &DVector<f64>,
    q: f64,
    theta_init: &DVector<f64>,
    opts: &LqaOptions,
) -> Result<LqaOutcome> {
    let p = obj.dim();
    if bounds.len() != p || weights.len() != p {
        return Err(Error::argument("LQA inputs must share the dimension"));
    }
    check_box(bounds, theta_init)?;
    let mut theta = theta_init.clone();
    clamp_into(bounds, &opts.newton.clamp_zero, &mut theta);
    let mut deleted = vec![false; p];
    for &j in &opts.newton.clamp_zero {
        deleted[j] = true;
        theta[j] = 0.0;
    }
    let penalty_of = |theta: &DVector<f64>| -> f64 {
        theta
            .iter()
            .zip(weights.iter())
            .map(|(&t, &w)| w * t.abs().powf(q))
            .sum()
    };
    let mut objective = obj.value(&theta)? - penalty_of(&theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        // Deletion pass: small coordinates drop out permanently.
        for j in 0..p {
            if !deleted[j] && theta[j].abs() < opts.tau {
                theta[j] = 0.0;
                deleted[j] = true;
            }
        }
        let active: Vec<usize> = (0..p).filter(|&j| !deleted[j]).collect();
        if active.is_empty() {
            converged = true;
            break;
        }
        let (_, grad, hess) = obj.value_grad_hess(&theta)?;
        // Quadratic majorant weights on the active coordinates.
        let mut neg_hess = -&hess;
        let mut rhs = grad.clone();
        for &j in &active {
            let w = weights[j] * q * theta[j].abs().powf(q - 2.0);
            neg_hess[(j, j)] += w;
            rhs[j] -= w * theta[j];
        }
        let step_act = ridge_solve(&neg_hess, &rhs, &active, opts.newton.ridge_init)?;
        let mut proposal = theta.clone();
        for (ai, &j) in active.iter().enumerate() {
            proposal[j] += step_act[ai];
        }
        clamp_into(bounds, &[], &mut proposal);
        for j in 0..p {
            if deleted[j] {
                proposal[j] = 0.0;
            }
        }
        // Majorization already guarantees ascent for the exact subproblem
        // solution; the halving guard protects against the curvature
        // model being wrong far from the iterate.
        let mut t = 1.0f64;
        let mut next = proposal.clone();
        let mut next_objective = obj.value(&next)? - penalty_of(&next);
        while next_objective < objective - 1e-12 && t > 1e-4 {
            t *= 0.5;
            next = &theta + t * (&proposal - &theta);
            for j in 0..p {
                if deleted[j] {
                    next[j] = 0.0;
                }
            }
            next_objective = obj.value(&next)? - penalty_of(&next);
        }
        let change = (&next - &theta).amax();
        theta = next;
        objective = next_objective;
        iterations += 1;
        if change < opts.coord_tol {
            converged = true;
            break;
        }
    }
    // Stationarity of the penalized objective on surviving interior
    // coordinates: ∂H_j = w q |θ_j|^{q-1} sign(θ_j).
    let (_, grad, _) = obj.value_grad_hess(&theta)?;
    let mut grad_norm = 0.0f64;
    for j in 0..p {
        if deleted[j] || theta[j] == 0.0 {
            continue;
        }
        let (lo, hi) = bounds[j];
        if theta[j] <= lo || theta[j] >= hi {
            continue;
        }
        let pen_grad = weights[j] * q * theta[j].abs().powf(q - 1.0) * theta[j].signum();
        grad_norm = grad_norm.max((grad[j] - pen_grad).abs());
    }
    Ok(LqaOutcome {
        theta,
        value: objective,
        grad_norm,
        iterations,
        converged,
    })
}

/// Penalized quasi maximum likelihood estimator via LQA.
///
/// `theta_init` defaults to the QMLE. When every weight is zero the
/// penalty is inert and the solve delegates to [`qmle`] (relabelled), so
/// the deletion threshold cannot introduce spurious zeros.
pub fn penalized_qmle(
    ds: &Dataset,
    model: &ModelSpec,
    penalty: &PenaltySpec,
    rates: &RateSpec,
    theta_init: Option<&DVector<f64>>,
    opts: &LqaOptions,
) -> Result<EstimationResult> {
    let started = Instant::now();
    penalty.validate()?;
    rates.validate()?;
    if rates.p() != model.p {
        return Err(Error::argument("rate spec dimension must match the model"));
    }
    let ql = prepare_likelihood(ds, model)?;
    let weights = penalty.weights(rates, ds.n);
    let init = match theta_init {
        Some(t) => {
            check_box(&model.theta_box, t).map_err(|_| {
                Error::domain("penalized starting point must lie in the closed box".to_string())
            })?;
            t.clone()
        }
        None => {
            let mut newton = NewtonOptions::default();
            newton.clamp_zero = opts.newton.clamp_zero.clone();
            qmle(ds, model, None, &newton)?.theta_hat
        }
    };
    if weights.iter().all(|&w| w == 0.0) {
        let outcome = newton_box_max(&ql, &model.theta_box, &init, &opts.newton)?;
        return Ok(EstimationResult {
            active_set: EstimationResult::active_set_of(&outcome.theta),
            theta_hat: outcome.theta,
            theta_init: init,
            method: Method::Penalized,
            iterations: outcome.iterations,
            grad_norm: outcome.grad_norm,
            objective: outcome.value,
            wall_time: started.elapsed(),
            converged: outcome.converged,
            mcmc: None,
        });
    }
    let outcome = lqa_box_max(&ql, &model.theta_box, &weights, penalty.q, &init, opts)?;
    let _ = penalty_value(penalty, rates, ds.n, &outcome.theta); // exercised in debug builds
    Ok(EstimationResult {
        active_set: EstimationResult::active_set_of(&outcome.theta),
        theta_hat: outcome.theta,
        theta_init: init,
        method: Method::Penalized,
        iterations: outcome.iterations,
        grad_norm: outcome.grad_norm,
        objective: outcome.value,
        wall_time: started.elapsed(),
        converged: outcome.converged,
        mcmc: None,
    })
}

/// Random-walk Metropolis options for the quasi-Bayesian estimator.
#[derive(Debug, Clone)]
pub struct McmcOptions {
    pub iterations: usize,
    pub burn_in: usize,
    /// Steps at the start of the burn-in during which the global proposal
    /// factor adapts toward a workable acceptance rate.
    pub adapt_steps: usize,
    /// Adaptation reviews the acceptance rate every this many steps.
    pub adapt_block: usize,
    /// Per-coordinate proposal standard deviations; `None` derives them
    /// from the objective curvature at the starting point.
    pub proposal_scale: Option<DVector<f64>>,
    pub seed: u64,
    /// Starting point; defaults to the box center.
    pub init: Option<DVector<f64>>,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            iterations: 20_000,
            burn_in: 5_000,
            adapt_steps: 1_000,
            adapt_block: 100,
            proposal_scale: None,
            seed: 0,
            init: None,
        }
    }
}

/// Quasi-Bayesian estimator on a synthetic objective: posterior mean of
/// `exp(H)` restricted to the box, by random-walk Metropolis.
pub fn qbe_box(
    obj: &impl Objective,
    bounds: &[(f64, f64)],
    opts: &McmcOptions,
) -> Result<EstimationResult> {
    let started = Instant::now();
    let p = obj.dim();
    if bounds.len() != p {
        return Err(Error::argument("box and objective dimension mismatch"));
    }
    if opts.burn_in >= opts.iterations {
        return Err(Error::argument("burn-in must be shorter than the chain"));
    }
    if opts.adapt_block == 0 {
        return Err(Error::argument("adaptation block must be positive"));
    }
    let mut theta = match &opts.init {
        Some(t) => {
            check_box(bounds, t)?;
            t.clone()
        }
        None => DVector::from_iterator(p, bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi))),
    };
    // Base per-coordinate proposal scale: 2.4/√p times the curvature
    // scale at the start, the classical RWM tuning.
    let base_scale = match &opts.proposal_scale {
        Some(s) => {
            if s.len() != p {
                return Err(Error::argument("proposal scale has wrong dimension"));
            }
            s.clone()
        }
        None => {
            let (_, _, hess) = obj.value_grad_hess(&theta)?;
            let neg = -&hess;
            let all: Vec<usize> = (0..p).collect();
            // Solve for the diagonal of the inverse curvature.
            let mut diag = DVector::zeros(p);
            for j in 0..p {
                let mut e = DVector::zeros(p);
                e[j] = 1.0;
                let col = ridge_solve(&neg, &e, &all, 1e-8)?;
                diag[j] = col[j].max(0.0);
            }
            DVector::from_iterator(
                p,
                (0..p).map(|j| 2.4 * diag[j].sqrt().max(1e-12) / (p as f64).sqrt()),
            )
        }
    };
    let mut rng = crate::seed::rng_from_seed(opts.seed);
    let mut factor = 1.0f64;
    let mut log_target = obj.value(&theta)?;
    let kept = opts.iterations - opts.burn_in;
    let mut draws = DMatrix::zeros(kept, p);
    let mut accepted_post = 0usize;
    let mut proposals_post = 0usize;
    let mut block_accepted = 0usize;
    for step in 0..opts.iterations {
        let mut proposal = theta.clone();
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            proposal[j] += factor * base_scale[j] * z;
        }
        let in_box = proposal
            .iter()
            .zip(bounds)
            .all(|(&t, &(lo, hi))| t >= lo && t <= hi);
        let mut accept = false;
        if in_box {
            let cand = obj.value(&proposal)?;
            let log_ratio = cand - log_target;
            if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp() {
                theta = proposal;
                log_target = cand;
                accept = true;
            }
        }
        if accept {
            block_accepted += 1;
        }
        if step < opts.adapt_steps && (step + 1) % opts.adapt_block == 0 {
            let rate = block_accepted as f64 / opts.adapt_block as f64;
            if rate > 0.45 {
                factor *= 1.5;
            } else if rate < 0.15 {
                factor /= 1.5;
            }
            block_accepted = 0;
        } else if (step + 1) % opts.adapt_block == 0 {
            block_accepted = 0;
        }
        if step >= opts.adapt_steps {
            proposals_post += 1;
            if accept {
                accepted_post += 1;
            }
        }
        if step >= opts.burn_in {
            draws.row_mut(step - opts.burn_in).copy_from(&theta.transpose());
        }
    }
    let acceptance_rate = if proposals_post == 0 {
        0.0
    } else {
        accepted_post as f64 / proposals_post as f64
    };
    let mut mean = DVector::zeros(p);
    for j in 0..p {
        mean[j] = draws.column(j).sum() / kept as f64;
    }
    let mut posterior_sd = Vec::with_capacity(p);
    let mut ess_min = f64::INFINITY;
    for j in 0..p {
        let col: Vec<f64> = draws.column(j).iter().cloned().collect();
        let m = mean[j];
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (kept - 1).max(1) as f64;
        posterior_sd.push(var.sqrt());
        ess_min = ess_min.min(effective_sample_size(&col)?);
    }
    let diagnostics_ok = (0.05..=0.95).contains(&acceptance_rate);
    let (_, grad, _) = obj.value_grad_hess(&mean)?;
    let init_record = match &opts.init {
        Some(t) => t.clone(),
        None => DVector::from_iterator(p, bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi))),
    };
    Ok(EstimationResult {
        active_set: EstimationResult::active_set_of(&mean),
        objective: log_target,
        grad_norm: grad.amax(),
        theta_hat: mean,
        theta_init: init_record,
        method: Method::Qbe,
        iterations: opts.iterations,
        wall_time: started.elapsed(),
        converged: diagnostics_ok,
        mcmc: Some(McmcDiagnostics {
            acceptance_rate,
            ess_min,
            posterior_sd,
        }),
    })
}

/// Quasi-Bayesian estimator: posterior mean under the uniform prior on
/// the (optionally narrowed) parameter box.
pub fn qbe(
    ds: &Dataset,
    model: &ModelSpec,
    prior_box: Option<&[(f64, f64)]>,
    opts: &McmcOptions,
) -> Result<EstimationResult> {
    let ql = prepare_likelihood(ds, model)?;
    let bounds: Vec<(f64, f64)> = match prior_box {
        Some(b) => {
            if b.len() != model.p {
                return Err(Error::argument("prior box has the wrong dimension"));
            }
            for (j, (&(plo, phi), &(mlo, mhi))) in b.iter().zip(&model.theta_box).enumerate() {
                if !(plo < phi) || plo < mlo || phi > mhi {
                    return Err(Error::argument(format!(
                        "prior box interval {j} must be a nonempty subset of the model box"
                    )));
                }
            }
            b.to_vec()
        }
        None => model.theta_box.clone(),
    };
    qbe_box(&ql, &bounds, opts)
}
