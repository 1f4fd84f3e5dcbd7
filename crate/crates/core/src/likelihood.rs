//! Quasi log-likelihood, derivatives, and limit-theoretic quantities.
//!
//! For the scalar observation families in this crate the conditional
//! variance has log-affine form `log S(x, θ) = c₀(x) + g(x)·θ`, so the
//! quasi log-likelihood
//!
//! ```text
//! H_n(θ) = -½ Σ_{j=1}^n [ log S(X_{t_{j-1}}, θ) + (Δ_j Y)² / (h S(X_{t_{j-1}}, θ)) ]
//! ```
//!
//! and its first two θ-derivatives are available in closed form. The
//! [`QuasiLikelihood`] context caches the per-observation features so
//! optimizers can evaluate the objective many times cheaply.
//!
//! The module also provides the local quadratic decomposition of `H_n`
//! around a point (score direction, normalized information, and the
//! remainder field) plus the continuous-time limits: the information
//! matrix `Γ(θ*)`, the contrast `Y(θ)`, and the separation index `χ₀`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelSpec, PathBundle};
use crate::seed::rng_from_seed;

/// Largest |log-variance| admitted before evaluation reports failure;
/// beyond this `S` overflows or degenerates to zero in double precision.
const LOG_VARIANCE_LIMIT: f64 = 700.0;

/// Cached evaluation context for one dataset/model pair.
///
/// Construction validates both inputs, extracts the feature rows
/// `g(X_{t_{j-1}})`, the offsets `c₀(X_{t_{j-1}})`, and the normalized
/// squared increments; evaluation afterwards never touches the dataset
/// again. The context is immutable and safe to share across threads.
#[derive(Debug, Clone)]
pub struct QuasiLikelihood {
    /// `n × p` feature rows `g(X_{t_{j-1}})`, `j = 1..=n`.
    features: DMatrix<f64>,
    /// Offsets `c₀(X_{t_{j-1}})`.
    offsets: DVector<f64>,
    /// `q_j = (Δ_j Y)² e^{-c₀_j} / h`.
    weights: DVector<f64>,
    n: usize,
    p: usize,
    h: f64,
}

impl QuasiLikelihood {
    /// Builds the context. Fails on dimension mismatches or if the
    /// variance degenerates at some observation.
    pub fn new(ds: &Dataset, spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        ds.validate()?;
        if ds.dim_x() != spec.d {
            return Err(Error::validation(format!(
                "dataset has {} covariates, model expects {}",
                ds.dim_x(),
                spec.d
            )));
        }
        if ds.dim_y() != spec.m {
            return Err(Error::validation(format!(
                "dataset has {} observed coordinates, model expects {}",
                ds.dim_y(),
                spec.m
            )));
        }
        let n = ds.n;
        let h = ds.h();
        let mut features = DMatrix::zeros(n, spec.p);
        let mut offsets = DVector::zeros(n);
        let mut weights = DVector::zeros(n);
        let mut x_row = vec![0.0; spec.d];
        for j in 1..=n {
            for k in 0..spec.d {
                x_row[k] = ds.x_obs[(j - 1, k)];
            }
            let (c0, g) = spec.log_variance_terms(&x_row);
            if !c0.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation {
                    index: j,
                    detail: "volatility features are non-finite".into(),
                });
            }
            let dy = ds.y_increment(j);
            offsets[j - 1] = c0;
            weights[j - 1] = dy * dy * (-c0).exp() / h;
            features.row_mut(j - 1).copy_from(&g.transpose());
        }
        Ok(QuasiLikelihood {
            features,
            offsets,
            weights,
            n,
            p: spec.p,
            h,
        })
    }

    /// Number of observation intervals.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Parameter dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Observation step.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// True when the variance carries no θ-dependence at any observation,
    /// i.e. the quasi-likelihood is constant and estimation is hopeless.
    pub fn is_flat(&self) -> bool {
        self.features.iter().all(|&v| v == 0.0)
    }

    /// Per-observation log-variances `z_j = c₀_j + g_j·θ`, with the range
    /// guard that turns overflow into an evaluation error naming `j`.
    fn log_variances(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.len() != self.p {
            return Err(Error::argument(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.p
            )));
        }
        let mut z = &self.features * theta;
        z += &self.offsets;
        for (j, v) in z.iter().enumerate() {
            if !v.is_finite() || v.abs() > LOG_VARIANCE_LIMIT {
                return Err(Error::Evaluation {
                    index: j + 1,
                    detail: format!("variance degenerates (log S = {v:.3e})"),
                });
            }
        }
        Ok(z)
    }

    /// Quasi log-likelihood `H_n(θ)`.
    pub fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        let z = self.log_variances(theta)?;
        let mut acc = 0.0;
        for j in 0..self.n {
            // log S + (ΔY)²/(h S) = z_j + q_j e^{-(z_j - c₀_j)}.
            acc += z[j] + self.weights[j] * (self.offsets[j] - z[j]).exp();
        }
        Ok(-0.5 * acc)
    }

    /// Gradient `∂_θ H_n(θ)`.
    pub fn score(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (_, g, _) = self.value_score_hessian_impl(theta, false)?;
        Ok(g)
    }

    /// Hessian `∂²_θ H_n(θ)` (exactly symmetric by construction).
    pub fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (_, _, h) = self.value_score_hessian_impl(theta, true)?;
        Ok(h)
    }

    /// Fused evaluation of `(H_n, ∂H_n, ∂²H_n)`; one exponential per
    /// observation, shared across all three outputs.
    pub fn value_score_hessian(
        &self,
        theta: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        self.value_score_hessian_impl(theta, true)
    }

    fn value_score_hessian_impl(
        &self,
        theta: &DVector<f64>,
        with_hessian: bool,
    ) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let z = self.log_variances(theta)?;
        let mut value = 0.0;
        // e_j = q_j exp(-(z_j - c₀_j)) is the standardized squared
        // increment; at the truth it concentrates near 1.
        let mut e = DVector::zeros(self.n);
        for j in 0..self.n {
            let ej = self.weights[j] * (-(z[j] - self.offsets[j])).exp();
            e[j] = ej;
            value += z[j] + ej;
        }
        value *= -0.5;
        // ∂H = -½ Σ g_j (1 - e_j).
        let one_minus_e = e.map(|v| 1.0 - v);
        let grad = -0.5 * self.features.tr_mul(&one_minus_e);
        let hessian = if with_hessian {
            // ∂²H = -½ Σ g_j g_j' e_j.
            let mut scaled = self.features.clone();
            for j in 0..self.n {
                for c in 0..self.p {
                    scaled[(j, c)] *= e[j];
                }
            }
            let mut h = self.features.tr_mul(&scaled);
            h *= -0.5;
            // Enforce exact symmetry against accumulation-order noise.
            for r in 0..self.p {
                for c in 0..r {
                    let avg = 0.5 * (h[(r, c)] + h[(c, r)]);
                    h[(r, c)] = avg;
                    h[(c, r)] = avg;
                }
            }
            h
        } else {
            DMatrix::zeros(self.p, self.p)
        };
        if !value.is_finite() {
            return Err(Error::Optimization(
                "quasi log-likelihood evaluated to a non-finite value".into(),
            ));
        }
        Ok((value, grad, hessian))
    }
}

/// Quasi log-likelihood `H_n(θ)` for a dataset/model pair.
///
/// Checks `θ ∈ Θ̄` (domain error otherwise) and builds a fresh evaluation
/// context; callers evaluating repeatedly should construct a
/// [`QuasiLikelihood`] once instead.
pub fn quasi_loglik(ds: &Dataset, spec: &ModelSpec, theta: &DVector<f64>) -> Result<f64> {
    require_in_box(spec, theta)?;
    QuasiLikelihood::new(ds, spec)?.value(theta)
}

/// Gradient of the quasi log-likelihood. See [`quasi_loglik`].
pub fn quasi_score(ds: &Dataset, spec: &ModelSpec, theta: &DVector<f64>) -> Result<DVector<f64>> {
    require_in_box(spec, theta)?;
    QuasiLikelihood::new(ds, spec)?.score(theta)
}

/// Hessian of the quasi log-likelihood. See [`quasi_loglik`].
pub fn quasi_hessian(ds: &Dataset, spec: &ModelSpec, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    require_in_box(spec, theta)?;
    QuasiLikelihood::new(ds, spec)?.hessian(theta)
}

fn require_in_box(spec: &ModelSpec, theta: &DVector<f64>) -> Result<()> {
    if !spec.in_closed_box(theta) {
        return Err(Error::domain(
            "theta outside the closed parameter box".to_string(),
        ));
    }
    Ok(())
}

/// Central finite-difference gradient with per-coordinate step
/// `1e-6·(1 + |θ_j|)`. Test oracle for closed-form scores.
pub fn fd_gradient(
    f: impl Fn(&DVector<f64>) -> Result<f64>,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = theta.len();
    let mut g = DVector::zeros(p);
    for j in 0..p {
        let step = 1e-6 * (1.0 + theta[j].abs());
        let mut hi = theta.clone();
        hi[j] += step;
        let mut lo = theta.clone();
        lo[j] -= step;
        g[j] = (f(&hi)? - f(&lo)?) / (2.0 * step);
    }
    Ok(g)
}

/// Central finite-difference Hessian via the four-point second-difference
/// stencil with per-coordinate steps `2e-4·(1 + |θ_j|)`. Accuracy is lower
/// than the gradient oracle; use tolerances accordingly.
pub fn fd_hessian(
    f: impl Fn(&DVector<f64>) -> Result<f64>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let p = theta.len();
    let step: Vec<f64> = theta.iter().map(|t| 2e-4 * (1.0 + t.abs())).collect();
    let f0 = f(theta)?;
    let mut h = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in j..p {
            let val = if j == k {
                let mut hi = theta.clone();
                hi[j] += 2.0 * step[j];
                let mut lo = theta.clone();
                lo[j] -= 2.0 * step[j];
                (f(&hi)? - 2.0 * f0 + f(&lo)?) / (4.0 * step[j] * step[j])
            } else {
                let mut pp = theta.clone();
                pp[j] += step[j];
                pp[k] += step[k];
                let mut pm = theta.clone();
                pm[j] += step[j];
                pm[k] -= step[k];
                let mut mp = theta.clone();
                mp[j] -= step[j];
                mp[k] += step[k];
                let mut mm = theta.clone();
                mm[j] -= step[j];
                mm[k] -= step[k];
                (f(&pp)? - f(&pm)? - f(&mp)? + f(&mm)?) / (4.0 * step[j] * step[k])
            };
            h[(j, k)] = val;
            h[(k, j)] = val;
        }
    }
    Ok(h)
}

/// Per-coordinate convergence rates `α_n^j = n^{-e_j}`.
///
/// The default is the diffusion-standard `n^{-1/2}` in every coordinate.
/// The power-law form keeps downstream regularity-condition checks exact:
/// products and quotients of rates reduce to exponent arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    /// Exponents `e_j > 0` in `α_n^j = n^{-e_j}`.
    pub exponents: Vec<f64>,
}

impl RateSpec {
    /// `α_n^j = n^{-1/2}` for all `p` coordinates.
    pub fn isotropic(p: usize) -> Self {
        RateSpec {
            exponents: vec![0.5; p],
        }
    }

    /// Checks that every rate really decays.
    pub fn validate(&self) -> Result<()> {
        if self.exponents.is_empty() {
            return Err(Error::validation("rate spec needs at least one exponent"));
        }
        if self.exponents.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::validation(
                "rate exponents must be positive so that ‖a_n‖ → 0",
            ));
        }
        Ok(())
    }

    /// Parameter dimension.
    pub fn p(&self) -> usize {
        self.exponents.len()
    }

    /// The vector `(α_n^1, …, α_n^p)`.
    pub fn alpha(&self, n: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.exponents.len(),
            self.exponents.iter().map(|&e| (n as f64).powf(-e)),
        )
    }

    /// Diagonal of the normalizing matrix `a_n` (equal to [`Self::alpha`];
    /// `a_n` is diagonal with entries `α_n^j`).
    pub fn a_diag(&self, n: usize) -> DVector<f64> {
        self.alpha(n)
    }
}

/// Local quadratic decomposition of an objective around a point:
///
/// ```text
/// H(θ* + a_n u) - H(θ*) = Δ_n·u - ½ u'Γ_n u + r_n(u)
/// ```
///
/// `delta_n = a_n ∂H(θ*)` and `gamma_n = -a_n ∂²H(θ*) a_n` come from the
/// closed-form derivatives; [`LaqDecomposition::remainder`] evaluates
/// `r_n(u)` by re-evaluating the objective, so the identity above holds
/// to floating-point accuracy by construction. Use
/// [`LaqDecomposition::remainder_with_gamma`] to measure the remainder
/// against an external (e.g. limit) information matrix instead.
pub struct LaqDecomposition {
    theta_star: DVector<f64>,
    a_diag: DVector<f64>,
    /// Score direction `a_n ∂H(θ*)`.
    pub delta_n: DVector<f64>,
    /// Normalized negative Hessian `-a_n ∂²H(θ*) a_n`.
    pub gamma_n: DMatrix<f64>,
    /// Objective value at the expansion point.
    pub value_at_star: f64,
    objective: Box<dyn Fn(&DVector<f64>) -> Result<f64> + Send + Sync>,
}

impl LaqDecomposition {
    /// Builds a decomposition from explicit parts. `value_fn` must be the
    /// same objective whose derivatives produced `score` and `hessian`.
    pub fn from_parts(
        value_fn: impl Fn(&DVector<f64>) -> Result<f64> + Send + Sync + 'static,
        score: &DVector<f64>,
        hessian: &DMatrix<f64>,
        theta_star: DVector<f64>,
        a_diag: DVector<f64>,
    ) -> Result<Self> {
        let p = theta_star.len();
        if score.len() != p || hessian.nrows() != p || hessian.ncols() != p || a_diag.len() != p {
            return Err(Error::argument(
                "decomposition parts must share one dimension",
            ));
        }
        let value_at_star = value_fn(&theta_star)?;
        let delta_n = DVector::from_iterator(p, (0..p).map(|j| a_diag[j] * score[j]));
        let mut gamma_n = DMatrix::zeros(p, p);
        for r in 0..p {
            for c in 0..p {
                gamma_n[(r, c)] = -a_diag[r] * hessian[(r, c)] * a_diag[c];
            }
        }
        Ok(LaqDecomposition {
            theta_star,
            a_diag,
            delta_n,
            gamma_n,
            value_at_star,
            objective: Box::new(value_fn),
        })
    }

    /// The shifted parameter `θ* + a_n u`.
    pub fn shifted(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut theta = self.theta_star.clone();
        for j in 0..theta.len() {
            theta[j] += self.a_diag[j] * u[j];
        }
        theta
    }

    /// Remainder `r_n(u)` measured against this decomposition's own
    /// `gamma_n`. Exactly zero at `u = 0`.
    pub fn remainder(&self, u: &DVector<f64>) -> Result<f64> {
        self.remainder_with_gamma(&self.gamma_n, u)
    }

    /// Remainder measured against an arbitrary symmetric matrix in place
    /// of `gamma_n` (typically the continuous-time limit `Γ(θ*)`).
    pub fn remainder_with_gamma(&self, gamma: &DMatrix<f64>, u: &DVector<f64>) -> Result<f64> {
        if u.len() != self.theta_star.len() {
            return Err(Error::argument("direction u has the wrong dimension"));
        }
        if u.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        let value = (self.objective)(&self.shifted(u))?;
        let quad = 0.5 * (gamma * u).dot(u);
        Ok(value - self.value_at_star - self.delta_n.dot(u) + quad)
    }

    /// Expansion point.
    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    /// Normalizing diagonal.
    pub fn a_diag(&self) -> &DVector<f64> {
        &self.a_diag
    }
}

/// Local quadratic decomposition of the quasi log-likelihood at `θ*`.
pub fn laq_decompose(
    ds: &Dataset,
    spec: &ModelSpec,
    theta_star: &DVector<f64>,
    rates: &RateSpec,
) -> Result<LaqDecomposition> {
    rates.validate()?;
    if rates.p() != spec.p {
        return Err(Error::argument("rate spec dimension must match the model"));
    }
    require_in_box(spec, theta_star)?;
    let ql = QuasiLikelihood::new(ds, spec)?;
    let (_, score, hessian) = ql.value_score_hessian(theta_star)?;
    let a_diag = rates.a_diag(ds.n);
    LaqDecomposition::from_parts(
        move |theta| ql.value(theta),
        &score,
        &hessian,
        theta_star.clone(),
        a_diag,
    )
}

/// Limit information matrix with its degeneracy diagnosis.
#[derive(Debug, Clone)]
pub struct LimitInformation {
    /// `Γ(θ*)`, symmetric positive semidefinite.
    pub matrix: DMatrix<f64>,
    /// Raised when the smallest eigenvalue falls below `1e-10` times the
    /// largest: the limit experiment is singular in some direction.
    pub degenerate: bool,
}

/// Left-endpoint Riemann approximation of the limit information
///
/// ```text
/// Γ(θ*)[u, v] = (1/2T) ∫₀ᵀ Tr( (∂_u S) S⁻¹ (∂_v S) S⁻¹ )(X_t, θ*) dt
/// ```
///
/// on the fine simulation grid. For the log-affine families the integrand
/// is `g_u(X_t) g_v(X_t)`, independent of `θ*`.
pub fn limit_information(
    paths: &PathBundle,
    spec: &ModelSpec,
    theta_star: &DVector<f64>,
) -> Result<LimitInformation> {
    spec.validate()?;
    require_in_box(spec, theta_star)?;
    let steps = paths.fine_steps();
    let mut gamma = DMatrix::zeros(spec.p, spec.p);
    let mut x_row = vec![0.0; spec.d];
    for i in 0..steps {
        for k in 0..spec.d {
            x_row[k] = paths.x_fine[(i, k)];
        }
        let (_, g) = spec.log_variance_terms(&x_row);
        gamma.syger(1.0, &g, &g, 1.0);
    }
    // syger fills the lower triangle; mirror it before scaling.
    for r in 0..spec.p {
        for c in 0..r {
            gamma[(c, r)] = gamma[(r, c)];
        }
    }
    gamma *= paths.fine_step / (2.0 * spec.horizon);
    let eig = gamma.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    let degenerate = !(max > 0.0) || min < 1e-10 * max;
    Ok(LimitInformation {
        matrix: gamma,
        degenerate,
    })
}

/// Left-endpoint Riemann approximation of the limit contrast
///
/// ```text
/// Y(θ) = -(1/2T) ∫₀ᵀ [ log(det S(X_t,θ)/det S(X_t,θ*))
///                      + Tr(S(X_t,θ)⁻¹ S(X_t,θ*)) - m ] dt ,
/// ```
///
/// a Kullback-type divergence: `Y(θ) ≤ 0` with equality at `θ = θ*`.
pub fn limit_contrast(
    paths: &PathBundle,
    spec: &ModelSpec,
    theta_star: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<f64> {
    spec.validate()?;
    require_in_box(spec, theta_star)?;
    require_in_box(spec, theta)?;
    let delta = theta - theta_star;
    let steps = paths.fine_steps();
    let mut acc = 0.0;
    let mut x_row = vec![0.0; spec.d];
    for i in 0..steps {
        for k in 0..spec.d {
            x_row[k] = paths.x_fine[(i, k)];
        }
        let (_, g) = spec.log_variance_terms(&x_row);
        let a = g.dot(&delta);
        // log-ratio + trace - m  =  a + e^{-a} - 1  (scalar case).
        acc += a + (-a).exp() - 1.0;
    }
    Ok(-acc * paths.fine_step / (2.0 * spec.horizon))
}

/// Estimates the separation index
///
/// ```text
/// χ₀ = inf_{θ ∈ Θ̄, θ ≠ θ*}  -Y(θ) / |θ - θ*|²
/// ```
///
/// by random multistart followed by coordinate-wise golden-section
/// refinement, everything clamped to the closed box. The multistart
/// stream is fixed internally so repeated calls agree. Non-negative by
/// construction of `-Y`.
pub fn chi0_estimate(
    paths: &PathBundle,
    spec: &ModelSpec,
    theta_star: &DVector<f64>,
    budget: usize,
) -> Result<f64> {
    spec.validate()?;
    require_in_box(spec, theta_star)?;
    if budget == 0 {
        return Err(Error::argument("chi0_estimate needs budget >= 1"));
    }
    // Cache fine-grid features once; each contrast evaluation is then a
    // single pass over the rows.
    let steps = paths.fine_steps();
    let mut feats = DMatrix::zeros(steps, spec.p);
    let mut x_row = vec![0.0; spec.d];
    for i in 0..steps {
        for k in 0..spec.d {
            x_row[k] = paths.x_fine[(i, k)];
        }
        let (_, g) = spec.log_variance_terms(&x_row);
        feats.row_mut(i).copy_from(&g.transpose());
    }
    let scale = paths.fine_step / (2.0 * spec.horizon);
    let neg_contrast = |theta: &DVector<f64>| -> f64 {
        let delta = theta - theta_star;
        let a = &feats * delta;
        let mut acc = 0.0;
        for v in a.iter() {
            acc += v + (-v).exp() - 1.0;
        }
        acc * scale
    };
    // Keep a safe distance from the removed point θ*; the objective
    // extends continuously there, so the guard does not hide the infimum.
    const GUARD: f64 = 1e-6;
    let ratio = |theta: &DVector<f64>| -> f64 {
        let dist2 = (theta - theta_star).norm_squared();
        if dist2 < GUARD * GUARD {
            return f64::INFINITY;
        }
        neg_contrast(theta) / dist2
    };

    let mut rng = rng_from_seed(0x00c0_ffee);
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = f64::INFINITY;
    for _ in 0..budget {
        let mut theta = DVector::from_iterator(
            spec.p,
            spec.theta_box.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)),
        );
        let mut current = ratio(&theta);
        // Coordinate-descent sweeps, each coordinate refined by
        // golden-section over its full box interval.
        for _sweep in 0..3 {
            for j in 0..spec.p {
                let (lo, hi) = spec.theta_box[j];
                let (mut a, mut b) = (lo, hi);
                let eval_at = |t: f64, theta: &mut DVector<f64>| -> f64 {
                    theta[j] = t;
                    ratio(theta)
                };
                let mut x1 = b - golden * (b - a);
                let mut x2 = a + golden * (b - a);
                let mut f1 = eval_at(x1, &mut theta);
                let mut f2 = eval_at(x2, &mut theta);
                for _ in 0..48 {
                    if f1 < f2 {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - golden * (b - a);
                        f1 = eval_at(x1, &mut theta);
                    } else {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + golden * (b - a);
                        f2 = eval_at(x2, &mut theta);
                    }
                }
                // Also probe the interval endpoints: the infimum of a
                // ratio like this often sits on the boundary.
                let candidates = [0.5 * (a + b), lo, hi];
                let mut best_t = candidates[0];
                let mut best_f = eval_at(best_t, &mut theta);
                for &t in &candidates[1..] {
                    let f = eval_at(t, &mut theta);
                    if f < best_f {
                        best_f = f;
                        best_t = t;
                    }
                }
                theta[j] = best_t;
                current = best_f;
            }
        }
        if current < best {
            best = current;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_observation, simulate_paths, CovariateDiffusion, Provenance};
    use approx::assert_relative_eq;

    /// Hand-built dataset: uniform grid on [0, T], given X rows and Y path.
    fn dataset(times: Vec<f64>, x: DMatrix<f64>, y: Vec<f64>) -> Dataset {
        let rows = y.len();
        Dataset::from_parts(
            times,
            x,
            DMatrix::from_column_slice(rows, 1, &y),
            Provenance::InMemory,
        )
        .unwrap()
    }

    /// A frozen-covariate model: X diffuses with coefficient 0 so every
    /// observation sees the same features.
    fn frozen_spec(d: usize, x0: Vec<f64>) -> ModelSpec {
        let mut spec = ModelSpec::sin_exp(d);
        spec.covariate = CovariateDiffusion::Constant { c: 0.0 };
        spec.x0 = x0;
        spec
    }

    #[test]
    fn two_observation_identity_variance_case() {
        // θ = 0 makes S ≡ 1: H = -½ Σ (ΔY_j)²/h with h = 0.5.
        let spec = ModelSpec::sin_exp(1);
        let ds = dataset(
            vec![0.0, 0.5, 1.0],
            DMatrix::from_column_slice(3, 1, &[0.3, -0.7, 0.1]),
            vec![0.0, 0.1, -0.1],
        );
        let h = quasi_loglik(&ds, &spec, &DVector::zeros(1)).unwrap();
        // ΔY = (0.1, -0.2): -½ [2·0.01 + 2·0.04] = -0.05.
        assert_relative_eq!(h, -0.05, epsilon = 1e-15);
    }

    #[test]
    fn one_observation_closed_form_in_theta() {
        // d = 1, n = 1, h = 1, x = π/2 (so sin x = 1), ΔY = 1:
        // H(θ) = -½ (2θ + e^{-2θ}).
        let spec = ModelSpec::sin_exp(1);
        let ds = dataset(
            vec![0.0, 1.0],
            DMatrix::from_column_slice(2, 1, &[std::f64::consts::FRAC_PI_2, 0.0]),
            vec![0.0, 1.0],
        );
        for theta in [-1.0, -0.3, 0.0, 0.7, 2.0] {
            let h = quasi_loglik(&ds, &spec, &DVector::from_element(1, theta)).unwrap();
            let expected = -0.5 * (2.0 * theta + (-2.0 * theta).exp());
            assert_relative_eq!(h, expected, epsilon = 1e-14);
        }
        // Score at θ = 0: -sin(x)(1 - e^{0}·1) = 0.
        let s = quasi_score(&ds, &spec, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(s[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn constant_volatility_is_flat_in_theta() {
        let spec = ModelSpec::constant_vol(2, 2, 1.7);
        let paths = simulate_paths(&spec, 12, 3, 5).unwrap();
        let ds = simulate_observation(&spec, &DVector::zeros(2), &paths).unwrap();
        let t0 = DVector::from_row_slice(&[0.0, 0.0]);
        let t1 = DVector::from_row_slice(&[1.0, -2.0]);
        let h0 = quasi_loglik(&ds, &spec, &t0).unwrap();
        let h1 = quasi_loglik(&ds, &spec, &t1).unwrap();
        assert_eq!(h0, h1);
        assert_eq!(quasi_score(&ds, &spec, &t1).unwrap().abs().max(), 0.0);
        assert_eq!(quasi_hessian(&ds, &spec, &t1).unwrap().abs().max(), 0.0);
        assert!(QuasiLikelihood::new(&ds, &spec).unwrap().is_flat());
    }

    #[test]
    fn score_and_hessian_match_finite_differences() {
        use rand::Rng;
        let spec = ModelSpec::sin_exp(3);
        let theta_star = DVector::from_row_slice(&[0.0, 1.0, -0.5]);
        let mut rng = crate::seed::rng_from_seed(77);
        for rep in 0..20 {
            let paths = simulate_paths(&spec, 40, 4, 1000 + rep).unwrap();
            let ds = simulate_observation(&spec, &theta_star, &paths).unwrap();
            let ql = QuasiLikelihood::new(&ds, &spec).unwrap();
            let theta =
                DVector::from_iterator(3, (0..3).map(|_| rng.gen_range(-1.5..1.5)));
            let (_, score, hess) = ql.value_score_hessian(&theta).unwrap();
            let fd_g = fd_gradient(|t| ql.value(t), &theta).unwrap();
            for j in 0..3 {
                let denom = 1.0 + score[j].abs();
                assert!(
                    (score[j] - fd_g[j]).abs() / denom < 1e-6,
                    "rep {rep} coord {j}: closed {} vs fd {}",
                    score[j],
                    fd_g[j]
                );
            }
            let fd_h = fd_hessian(|t| ql.value(t), &theta).unwrap();
            for r in 0..3 {
                for c in 0..3 {
                    let denom = 1.0 + hess[(r, c)].abs();
                    assert!(
                        (hess[(r, c)] - fd_h[(r, c)]).abs() / denom < 1e-5,
                        "rep {rep} entry ({r},{c}): closed {} vs fd {}",
                        hess[(r, c)],
                        fd_h[(r, c)]
                    );
                }
            }
        }
    }

    #[test]
    fn evaluation_error_names_the_observation() {
        let spec = ModelSpec::sin_exp(1);
        let mut box_wide = spec.clone();
        box_wide.theta_box = vec![(-2000.0, 2000.0)];
        let ds = dataset(
            vec![0.0, 1.0],
            DMatrix::from_column_slice(2, 1, &[std::f64::consts::FRAC_PI_2, 0.0]),
            vec![0.0, 1.0],
        );
        let theta = DVector::from_element(1, 600.0);
        match quasi_loglik(&ds, &box_wide, &theta) {
            Err(Error::Evaluation { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_box_theta_is_a_domain_error() {
        let spec = ModelSpec::sin_exp(1);
        let ds = dataset(
            vec![0.0, 1.0],
            DMatrix::from_column_slice(2, 1, &[0.5, 0.0]),
            vec![0.0, 1.0],
        );
        let theta = DVector::from_element(1, 100.0);
        assert!(matches!(
            quasi_loglik(&ds, &spec, &theta),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn laq_identity_reconstructs_objective() {
        let spec = ModelSpec::sin_exp(2);
        let theta_star = DVector::from_row_slice(&[0.4, -0.8]);
        let paths = simulate_paths(&spec, 200, 5, 21).unwrap();
        let ds = simulate_observation(&spec, &theta_star, &paths).unwrap();
        let rates = RateSpec::isotropic(2);
        let laq = laq_decompose(&ds, &spec, &theta_star, &rates).unwrap();
        let ql = QuasiLikelihood::new(&ds, &spec).unwrap();
        // remainder(0) is exactly zero.
        assert_eq!(laq.remainder(&DVector::zeros(2)).unwrap(), 0.0);
        // The four pieces reassemble H at shifted points to 1e-10.
        for u in [
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[-0.5, 2.0]),
            DVector::from_row_slice(&[1.5, 1.5]),
        ] {
            let r = laq.remainder(&u).unwrap();
            let lhs = ql.value(&laq.shifted(&u)).unwrap();
            let rhs = laq.value_at_star + laq.delta_n.dot(&u)
                - 0.5 * (&laq.gamma_n * &u).dot(&u)
                + r;
            assert!((lhs - rhs).abs() < 1e-10, "identity off by {}", lhs - rhs);
        }
        // gamma_n is symmetric to within 1e-10 relative.
        let asym = (&laq.gamma_n - laq.gamma_n.transpose()).abs().max();
        assert!(asym <= 1e-10 * laq.gamma_n.abs().max());
    }

    #[test]
    fn laq_of_exact_quadratic_has_zero_remainder() {
        // H(θ) = -½ n |θ - θ*|² with a_n = n^{-1/2}: Δ = 0, Γ = I, r ≡ 0.
        let n = 400usize;
        let theta_star = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let ts = theta_star.clone();
        let value = move |theta: &DVector<f64>| -> Result<f64> {
            Ok(-0.5 * n as f64 * (theta - &ts).norm_squared())
        };
        let score = DVector::zeros(3);
        let hessian = DMatrix::from_diagonal_element(3, 3, -(n as f64));
        let a = DVector::from_element(3, (n as f64).powf(-0.5));
        let laq =
            LaqDecomposition::from_parts(value, &score, &hessian, theta_star, a).unwrap();
        assert_eq!(laq.delta_n.abs().max(), 0.0);
        assert_relative_eq!(laq.gamma_n[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(laq.gamma_n[(1, 1)], 1.0, epsilon = 1e-12);
        assert_eq!(laq.gamma_n[(0, 1)], 0.0);
        let mut rng = crate::seed::rng_from_seed(3);
        use rand::Rng;
        for _ in 0..25 {
            let u = DVector::from_iterator(3, (0..3).map(|_| rng.gen_range(-2.0..2.0)));
            assert!(laq.remainder(&u).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn limit_information_frozen_covariates() {
        // X frozen at x0 with sin(x0) = (s₁, s₂): Γ = 2 s s' on T = 1.
        let s = [0.6f64, -0.3f64];
        let x0: Vec<f64> = s.iter().map(|v| v.asin()).collect();
        let spec = frozen_spec(2, x0);
        let paths = simulate_paths(&spec, 50, 2, 9).unwrap();
        let theta_star = DVector::zeros(2);
        let info = limit_information(&paths, &spec, &theta_star).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_relative_eq!(info.matrix[(r, c)], 2.0 * s[r] * s[c], epsilon = 1e-12);
            }
        }
        // Rank-one limit: degenerate in the orthogonal direction.
        assert!(info.degenerate);

        // p = 1, s = 1: Γ = 2, non-degenerate.
        let spec1 = frozen_spec(1, vec![std::f64::consts::FRAC_PI_2]);
        let paths1 = simulate_paths(&spec1, 50, 2, 9).unwrap();
        let info1 = limit_information(&paths1, &spec1, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(info1.matrix[(0, 0)], 2.0, epsilon = 1e-12);
        assert!(!info1.degenerate);
    }

    #[test]
    fn limit_information_zero_features_degenerates() {
        let spec = frozen_spec(2, vec![0.0, 0.0]);
        let paths = simulate_paths(&spec, 10, 2, 4).unwrap();
        let info = limit_information(&paths, &spec, &DVector::zeros(2)).unwrap();
        assert_eq!(info.matrix.abs().max(), 0.0);
        assert!(info.degenerate);
    }

    #[test]
    fn limit_contrast_vanishes_at_truth_and_matches_closed_form() {
        let spec = frozen_spec(1, vec![std::f64::consts::FRAC_PI_2]);
        let paths = simulate_paths(&spec, 64, 2, 13).unwrap();
        let theta_star = DVector::from_element(1, 0.25);
        assert_eq!(
            limit_contrast(&paths, &spec, &theta_star, &theta_star).unwrap(),
            0.0
        );
        for delta in [-0.9, -0.1, 0.05, 0.5, 1.0] {
            let theta = DVector::from_element(1, 0.25 + delta);
            let y = limit_contrast(&paths, &spec, &theta_star, &theta).unwrap();
            // -Y(δ) = ½ (2δ + e^{-2δ} - 1) for frozen sin(x) = 1, T = 1.
            let expected = -0.5 * (2.0 * delta + (-2.0 * delta).exp() - 1.0);
            assert_relative_eq!(y, expected, epsilon = 1e-12);
            assert!(y <= 0.0, "contrast must be non-positive, got {y}");
        }
        // Quadratic behaviour near the truth: -Y(δ)/δ² → 1.
        let theta = DVector::from_element(1, 0.25 + 1e-4);
        let y = limit_contrast(&paths, &spec, &theta_star, &theta).unwrap();
        assert_relative_eq!(-y / 1e-8, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn chi0_matches_one_dimensional_grid_oracle() {
        // Frozen sin(x) = 1, Θ = (θ*-1, θ*+1): the ratio is
        // [2δ + e^{-2δ} - 1]/(2δ²), minimized at the boundary δ = 1 with
        // value (1 + e^{-2})/2.
        let theta_star_val = 0.3;
        let mut spec = frozen_spec(1, vec![std::f64::consts::FRAC_PI_2]);
        spec.theta_box = vec![(theta_star_val - 1.0, theta_star_val + 1.0)];
        let paths = simulate_paths(&spec, 32, 2, 2).unwrap();
        let theta_star = DVector::from_element(1, theta_star_val);

        // Independent grid oracle over 10⁴ points.
        let mut oracle = f64::INFINITY;
        for i in 0..10_000 {
            let delta = -1.0 + 2.0 * (i as f64 + 0.5) / 10_000.0;
            if delta.abs() < 1e-6 {
                continue;
            }
            let v = (2.0 * delta + (-2.0 * delta).exp() - 1.0) / (2.0 * delta * delta);
            oracle = oracle.min(v);
        }
        let expected = (1.0 + (-2.0f64).exp()) / 2.0;
        assert_relative_eq!(oracle, expected, epsilon = 1e-3);

        let chi0 = chi0_estimate(&paths, &spec, &theta_star, 8).unwrap();
        assert_relative_eq!(chi0, expected, epsilon = 1e-4);
        assert!(chi0 >= 0.0);
        // Budget 0 is rejected.
        assert!(chi0_estimate(&paths, &spec, &theta_star, 0).is_err());
    }

    #[test]
    fn rate_spec_basics() {
        let rates = RateSpec::isotropic(3);
        rates.validate().unwrap();
        let a = rates.alpha(10_000);
        for j in 0..3 {
            assert_relative_eq!(a[j], 0.01, epsilon = 1e-15);
        }
        let bad = RateSpec {
            exponents: vec![0.5, 0.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fused_evaluation_agrees_with_parts() {
        let spec = ModelSpec::sin_exp(2);
        let theta_star = DVector::from_row_slice(&[1.0, 0.0]);
        let paths = simulate_paths(&spec, 30, 3, 17).unwrap();
        let ds = simulate_observation(&spec, &theta_star, &paths).unwrap();
        let ql = QuasiLikelihood::new(&ds, &spec).unwrap();
        let theta = DVector::from_row_slice(&[0.3, -0.6]);
        let (v, g, h) = ql.value_score_hessian(&theta).unwrap();
        assert_eq!(v, ql.value(&theta).unwrap());
        assert_eq!(g, ql.score(&theta).unwrap());
        assert_eq!(h, ql.hessian(&theta).unwrap());
    }
}
