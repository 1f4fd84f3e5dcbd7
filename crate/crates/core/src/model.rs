//! Model description, path simulation, and dataset persistence.
//!
//! The observation model is a stochastic regression: a scalar (or, in
//! principle, vector) process `Y` accumulates volatility-weighted Wiener
//! increments, with the volatility `σ(x, θ)` driven by a `d`-dimensional
//! covariate diffusion `X` observed synchronously with `Y` on a uniform
//! grid over `[0, T]`. Estimation targets `θ`; the drift of `Y` is a
//! nuisance and the built-in models set it to zero.
//!
//! Simulation uses Euler–Maruyama on a fine grid with `κ` sub-steps per
//! observation interval, then subsamples to the observation grid. All
//! randomness flows through a caller-supplied seed, and identical seeds
//! reproduce paths bit-for-bit.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Volatility family of the observed process.
///
/// Both built-ins have scalar observation dimension and a log-variance
/// that is affine in `θ`; see [`ModelSpec::log_variance_terms`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Volatility {
    /// `σ(x, θ) = exp(Σ_k θ_k sin(x^k))`. Requires `p == d`.
    SinExp,
    /// `σ ≡ c` with `c > 0`, independent of `θ`. The parameter carries no
    /// information here, which makes this family the canonical test hook
    /// for non-identifiability handling.
    Constant { c: f64 },
}

/// Diffusion coefficient of each covariate coordinate (zero drift).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateDiffusion {
    /// Coordinate `k` (1-based) diffuses as `sin(2kπt) / (1 + x²)`,
    /// a bounded, time-inhomogeneous coefficient.
    SineDamped,
    /// Every coordinate diffuses with constant coefficient `c`
    /// (`c = 0` freezes the covariates at their initial values).
    Constant { c: f64 },
}

/// Drift family of the observed process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drift {
    Zero,
}

/// Full description of a stochastic regression model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Parameter dimension.
    pub p: usize,
    /// Covariate dimension.
    pub d: usize,
    /// Observation dimension (the built-in families require `m = 1`).
    pub m: usize,
    /// Time horizon `T`.
    pub horizon: f64,
    /// Per-coordinate open parameter box `Θ`.
    pub theta_box: Vec<(f64, f64)>,
    pub volatility: Volatility,
    pub covariate: CovariateDiffusion,
    pub drift: Drift,
    /// Initial covariate values (defaults to the origin).
    pub x0: Vec<f64>,
    /// Initial observation values (defaults to the origin).
    pub y0: Vec<f64>,
}

/// Default half-width of the parameter box used by the built-in
/// constructors. Wide enough that the constraints never bind at the
/// sample sizes of the bundled experiments.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 5.0;

impl ModelSpec {
    /// Sin-exponential volatility model with `p = d` parameters on the
    /// unit horizon: the configuration of the bundled simulation study.
    pub fn sin_exp(d: usize) -> Self {
        ModelSpec {
            p: d,
            d,
            m: 1,
            horizon: 1.0,
            theta_box: vec![(-DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH); d],
            volatility: Volatility::SinExp,
            covariate: CovariateDiffusion::SineDamped,
            drift: Drift::Zero,
            x0: vec![0.0; d],
            y0: vec![0.0],
        }
    }

    /// Constant-volatility model (test hook; see [`Volatility::Constant`]).
    pub fn constant_vol(p: usize, d: usize, c: f64) -> Self {
        ModelSpec {
            p,
            d,
            m: 1,
            horizon: 1.0,
            theta_box: vec![(-DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH); p],
            volatility: Volatility::Constant { c },
            covariate: CovariateDiffusion::SineDamped,
            drift: Drift::Zero,
            x0: vec![0.0; d],
            y0: vec![0.0],
        }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.d == 0 {
            return Err(Error::validation("p and d must be at least 1"));
        }
        if self.m != 1 {
            return Err(Error::validation(format!(
                "observation dimension m = {} unsupported; built-in families require m = 1",
                self.m
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::validation("horizon must be a positive real"));
        }
        if self.theta_box.len() != self.p {
            return Err(Error::validation(format!(
                "theta_box has {} intervals for p = {}",
                self.theta_box.len(),
                self.p
            )));
        }
        for (j, &(lo, hi)) in self.theta_box.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::validation(format!(
                    "theta_box interval {j} = ({lo}, {hi}) must have positive finite length"
                )));
            }
        }
        if self.x0.len() != self.d {
            return Err(Error::validation("x0 length must equal d"));
        }
        if self.y0.len() != self.m {
            return Err(Error::validation("y0 length must equal m"));
        }
        match self.volatility {
            Volatility::SinExp => {
                if self.p != self.d {
                    return Err(Error::validation(
                        "sin_exp volatility pairs one parameter per covariate (p must equal d)",
                    ));
                }
            }
            Volatility::Constant { c } => {
                if !(c > 0.0) || !c.is_finite() {
                    return Err(Error::validation(
                        "constant volatility needs c > 0 so that S = c² is positive definite",
                    ));
                }
            }
        }
        if let CovariateDiffusion::Constant { c } = self.covariate {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::validation(
                    "constant covariate diffusion needs a finite c >= 0",
                ));
            }
        }
        Ok(())
    }

    /// Whether `theta` lies in the closed box `Θ̄`.
    pub fn in_closed_box(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.p
            && theta
                .iter()
                .zip(&self.theta_box)
                .all(|(&t, &(lo, hi))| t >= lo && t <= hi)
    }

    /// Projects `theta` onto the closed box, coordinate by coordinate.
    pub fn project_box(&self, theta: &mut DVector<f64>) {
        for (t, &(lo, hi)) in theta.iter_mut().zip(&self.theta_box) {
            *t = t.clamp(lo, hi);
        }
    }

    /// Center of the parameter box; the default optimizer start.
    pub fn box_center(&self) -> DVector<f64> {
        DVector::from_iterator(self.p, self.theta_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)))
    }

    /// Log-variance decomposition `log S(x, θ) = c₀(x) + g(x)·θ`.
    ///
    /// Both built-in families are affine in `θ` on the log scale, which is
    /// what makes the quasi-likelihood derivatives available in closed
    /// form. `x` is one covariate state (length `d`); the result is the
    /// offset `c₀(x)` and the gradient vector `g(x)` of length `p`.
    pub fn log_variance_terms(&self, x: &[f64]) -> (f64, DVector<f64>) {
        debug_assert_eq!(x.len(), self.d);
        match self.volatility {
            Volatility::SinExp => {
                let g = DVector::from_iterator(self.d, x.iter().map(|&xi| 2.0 * xi.sin()));
                (0.0, g)
            }
            Volatility::Constant { c } => (2.0 * c.ln(), DVector::zeros(self.p)),
        }
    }

    /// Volatility `σ(x, θ)` (scalar; `m = 1`).
    pub fn sigma(&self, x: &[f64], theta: &DVector<f64>) -> f64 {
        let (c0, g) = self.log_variance_terms(x);
        (0.5 * (c0 + g.dot(theta))).exp()
    }

    /// Diffusion coefficient of covariate coordinate `k` (0-based) at
    /// time `t` and state `x_k`.
    pub fn covariate_coefficient(&self, k: usize, t: f64, x_k: f64) -> f64 {
        match self.covariate {
            CovariateDiffusion::SineDamped => {
                let freq = 2.0 * std::f64::consts::PI * (k + 1) as f64;
                (freq * t).sin() / (1.0 + x_k * x_k)
            }
            CovariateDiffusion::Constant { c } => c,
        }
    }
}

/// How a dataset came to exist; carried along for report provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Produced by [`simulate_observation`].
    Simulated {
        seed: Option<u64>,
        theta_star: Vec<f64>,
        model: Box<ModelSpec>,
    },
    /// Loaded from a file by [`load_dataset`].
    Ingested { path: String },
    /// Assembled in memory (tests, synthetic objectives).
    InMemory,
}

/// Fine-grid simulation output: covariate paths plus every Wiener
/// increment that drove them (and the extra driver reserved for `Y`).
#[derive(Debug, Clone)]
pub struct PathBundle {
    /// Fine step `T / (n·κ)`.
    pub fine_step: f64,
    /// Sub-steps per observation interval.
    pub refinement: usize,
    /// Number of observation intervals.
    pub n: usize,
    /// `(n·κ + 1) × d` covariate states on the fine grid.
    pub x_fine: DMatrix<f64>,
    /// `(n·κ) × (d + 1)` Wiener increments: columns `0..d` drive the
    /// covariates, column `d` is reserved for the observed process.
    pub wiener_increments: DMatrix<f64>,
    /// Seed used for internal generation; `None` when increments were
    /// prescribed by the caller.
    pub seed_record: Option<u64>,
}

impl PathBundle {
    /// Fine-grid time of row `i`.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.fine_step
    }

    /// Number of fine steps `n·κ`.
    pub fn fine_steps(&self) -> usize {
        self.n * self.refinement
    }
}

/// Synchronous observations of `(X, Y)` on the uniform grid `t_j = jT/n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    /// Number of observation intervals (there are `n + 1` rows).
    pub n: usize,
    /// Observation times, uniform on `[0, T]`.
    pub times: Vec<f64>,
    /// `(n + 1) × d` covariate observations.
    pub x_obs: DMatrix<f64>,
    /// `(n + 1) × m` observations of the target process.
    pub y_obs: DMatrix<f64>,
    pub provenance: Provenance,
}

/// Relative tolerance for grid uniformity checks. The comparison also
/// allows a few ulps of the running time value, since `t_j = j·h`
/// rounds each entry independently.
const GRID_TOLERANCE: f64 = 1e-12;

impl Dataset {
    /// Observation step `h = T/n`.
    pub fn h(&self) -> f64 {
        self.horizon() / self.n as f64
    }

    /// Time horizon `T` (the last observation time).
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("validated dataset has times")
    }

    /// Covariate dimension.
    pub fn dim_x(&self) -> usize {
        self.x_obs.ncols()
    }

    /// Observation dimension.
    pub fn dim_y(&self) -> usize {
        self.y_obs.ncols()
    }

    /// Assembles a dataset from raw parts, enforcing the invariants.
    pub fn from_parts(
        times: Vec<f64>,
        x_obs: DMatrix<f64>,
        y_obs: DMatrix<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::validation("a dataset needs at least two times"));
        }
        let n = times.len() - 1;
        let ds = Dataset {
            n,
            times,
            x_obs,
            y_obs,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Checks the structural invariants: uniform strictly-increasing
    /// times, finite entries, consistent row counts.
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.n + 1 {
            return Err(Error::validation("times length must be n + 1"));
        }
        if self.n < 1 {
            return Err(Error::validation("dataset needs n >= 1 intervals"));
        }
        if self.x_obs.nrows() != self.n + 1 || self.y_obs.nrows() != self.n + 1 {
            return Err(Error::validation(
                "X and Y must have one row per observation time",
            ));
        }
        if self.times[0] != 0.0 {
            return Err(Error::validation("observation times must start at 0"));
        }
        let horizon = *self.times.last().expect("n + 1 >= 2 times");
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::validation("horizon must be positive and finite"));
        }
        for (j, w) in self.times.windows(2).enumerate() {
            if !(w[1] - w[0] > 0.0) {
                return Err(Error::validation(format!(
                    "times must be strictly increasing (violated between rows {j} and {})",
                    j + 1
                )));
            }
        }
        let h = horizon / self.n as f64;
        for (j, w) in self.times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if (step - h).abs() > GRID_TOLERANCE * h.abs() + 8.0 * f64::EPSILON * w[1].abs() {
                return Err(Error::validation(format!(
                    "times must be uniform: step {j} is {step:.17e}, expected {h:.17e}"
                )));
            }
        }
        if self.times.iter().any(|t| !t.is_finite())
            || self.x_obs.iter().any(|v| !v.is_finite())
            || self.y_obs.iter().any(|v| !v.is_finite())
        {
            return Err(Error::validation("dataset entries must all be finite"));
        }
        Ok(())
    }

    /// Increment `Δ_j Y = Y_{t_j} - Y_{t_{j-1}}` for `j = 1..=n` of the
    /// first observation coordinate.
    pub fn y_increment(&self, j: usize) -> f64 {
        self.y_obs[(j, 0)] - self.y_obs[(j - 1, 0)]
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Dataset(n = {}, d = {}, m = {}, T = {})",
            self.n,
            self.dim_x(),
            self.dim_y(),
            self.horizon()
        )
    }
}

/// Simulates the covariate paths (and all Wiener increments) on the fine
/// grid with `κ` sub-steps per observation interval.
///
/// The increments are drawn time-major — for each fine step, first the
/// `d` covariate drivers, then the observation driver — so the stream
/// layout is a pure function of `(spec, n, κ, seed)`.
pub fn simulate_paths(spec: &ModelSpec, n: usize, kappa: usize, seed: u64) -> Result<PathBundle> {
    spec.validate()?;
    if n < 1 {
        return Err(Error::argument("simulate_paths needs n >= 1"));
    }
    if kappa < 1 {
        return Err(Error::argument("simulate_paths needs κ >= 1"));
    }
    let steps = n * kappa;
    let fine_step = spec.horizon / steps as f64;
    let sqrt_h = fine_step.sqrt();
    let mut rng = rng_from_seed(seed);
    let mut increments = DMatrix::zeros(steps, spec.d + 1);
    for i in 0..steps {
        for c in 0..=spec.d {
            let z: f64 = StandardNormal.sample(&mut rng);
            increments[(i, c)] = sqrt_h * z;
        }
    }
    let bundle = integrate_covariates(spec, n, kappa, increments, Some(seed))?;
    Ok(bundle)
}

/// Builds a [`PathBundle`] from caller-prescribed Wiener increments.
///
/// `increments` must be `(n·κ) × (d + 1)`; column `d` is passed through to
/// the observation stage untouched. Useful for deterministic tests of the
/// Euler recursion.
pub fn simulate_paths_from_increments(
    spec: &ModelSpec,
    n: usize,
    kappa: usize,
    increments: DMatrix<f64>,
) -> Result<PathBundle> {
    spec.validate()?;
    if n < 1 || kappa < 1 {
        return Err(Error::argument("path construction needs n >= 1 and κ >= 1"));
    }
    if increments.nrows() != n * kappa || increments.ncols() != spec.d + 1 {
        return Err(Error::argument(format!(
            "increments must be {}×{}, got {}×{}",
            n * kappa,
            spec.d + 1,
            increments.nrows(),
            increments.ncols()
        )));
    }
    integrate_covariates(spec, n, kappa, increments, None)
}

/// Euler–Maruyama recursion for the covariates given the increment table.
fn integrate_covariates(
    spec: &ModelSpec,
    n: usize,
    kappa: usize,
    increments: DMatrix<f64>,
    seed_record: Option<u64>,
) -> Result<PathBundle> {
    let steps = n * kappa;
    let fine_step = spec.horizon / steps as f64;
    let mut x_fine = DMatrix::zeros(steps + 1, spec.d);
    for k in 0..spec.d {
        x_fine[(0, k)] = spec.x0[k];
    }
    for i in 0..steps {
        let t = i as f64 * fine_step;
        for k in 0..spec.d {
            let x = x_fine[(i, k)];
            let next = x + spec.covariate_coefficient(k, t, x) * increments[(i, k)];
            if !next.is_finite() {
                return Err(Error::SimulationDiverged {
                    step: i,
                    detail: format!("covariate {k} became non-finite"),
                });
            }
            x_fine[(i + 1, k)] = next;
        }
    }
    Ok(PathBundle {
        fine_step,
        refinement: kappa,
        n,
        x_fine,
        wiener_increments: increments,
        seed_record,
    })
}

/// Accumulates the observed process on the fine grid and subsamples both
/// `X` and `Y` to the `n + 1` observation times.
pub fn simulate_observation(
    spec: &ModelSpec,
    theta_star: &DVector<f64>,
    paths: &PathBundle,
) -> Result<Dataset> {
    spec.validate()?;
    if !spec.in_closed_box(theta_star) {
        return Err(Error::domain(format!(
            "theta_star outside the closed parameter box (p = {}, got length {})",
            spec.p,
            theta_star.len()
        )));
    }
    let steps = paths.fine_steps();
    let d = spec.d;
    let mut y_fine = vec![0.0f64; steps + 1];
    y_fine[0] = spec.y0[0];
    let mut x_row = vec![0.0f64; d];
    for i in 0..steps {
        for k in 0..d {
            x_row[k] = paths.x_fine[(i, k)];
        }
        let sigma = spec.sigma(&x_row, theta_star);
        // Zero drift in all built-in families; the Euler sum is purely
        // the volatility-weighted increment of the reserved driver.
        let next = y_fine[i] + sigma * paths.wiener_increments[(i, d)];
        if !next.is_finite() {
            return Err(Error::SimulationDiverged {
                step: i,
                detail: "observed process became non-finite".into(),
            });
        }
        y_fine[i + 1] = next;
    }
    let n = paths.n;
    let kappa = paths.refinement;
    let mut times = Vec::with_capacity(n + 1);
    let mut x_obs = DMatrix::zeros(n + 1, d);
    let mut y_obs = DMatrix::zeros(n + 1, spec.m);
    for j in 0..=n {
        times.push(j as f64 * spec.horizon / n as f64);
        let fine_index = j * kappa;
        for k in 0..d {
            x_obs[(j, k)] = paths.x_fine[(fine_index, k)];
        }
        y_obs[(j, 0)] = y_fine[fine_index];
    }
    Dataset::from_parts(
        times,
        x_obs,
        y_obs,
        Provenance::Simulated {
            seed: paths.seed_record,
            theta_star: theta_star.iter().cloned().collect(),
            model: Box::new(spec.clone()),
        },
    )
}

/// Writes a dataset as headered CSV with full round-trip precision.
///
/// Header: `t,x1,...,xd,y1,...,ym`; one row per observation time; every
/// number printed with 17 significant digits so that reading the file
/// back reproduces the original values exactly.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    let d = ds.dim_x();
    let m = ds.dim_y();
    let mut header = String::from("t");
    for k in 1..=d {
        header.push_str(&format!(",x{k}"));
    }
    for k in 1..=m {
        header.push_str(&format!(",y{k}"));
    }
    writeln!(w, "{header}")?;
    for j in 0..=ds.n {
        write!(w, "{:.16e}", ds.times[j])?;
        for k in 0..d {
            write!(w, ",{:.16e}", ds.x_obs[(j, k)])?;
        }
        for k in 0..m {
            write!(w, ",{:.16e}", ds.y_obs[(j, k)])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`] (or any file matching the
/// same schema). Parse failures name the 1-based line; structural
/// problems (non-uniform grid, non-finite entries) surface as validation
/// errors after parsing.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        detail: "empty file".into(),
    })?;
    let header = header.map_err(Error::Io)?;
    let columns: Vec<&str> = header.trim().split(',').collect();
    let (d, m) = parse_header(&columns)?;
    let ncols = 1 + d + m;
    let mut times = Vec::new();
    let mut x_rows: Vec<f64> = Vec::new();
    let mut y_rows: Vec<f64> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != ncols {
            return Err(Error::Parse {
                line: line_no,
                detail: format!("expected {ncols} columns, found {}", fields.len()),
            });
        }
        let mut parsed = Vec::with_capacity(ncols);
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                detail: format!("column {} is not a number: {field:?}", c + 1),
            })?;
            parsed.push(v);
        }
        times.push(parsed[0]);
        x_rows.extend_from_slice(&parsed[1..1 + d]);
        y_rows.extend_from_slice(&parsed[1 + d..]);
    }
    if times.len() < 2 {
        return Err(Error::Parse {
            line: times.len() + 1,
            detail: "need at least two observation rows".into(),
        });
    }
    let rows = times.len();
    let x_obs = DMatrix::from_row_slice(rows, d, &x_rows);
    let y_obs = DMatrix::from_row_slice(rows, m, &y_rows);
    Dataset::from_parts(
        times,
        x_obs,
        y_obs,
        Provenance::Ingested {
            path: path.display().to_string(),
        },
    )
}

/// Validates the CSV header and returns `(d, m)`.
fn parse_header(columns: &[&str]) -> Result<(usize, usize)> {
    if columns.first() != Some(&"t") {
        return Err(Error::Parse {
            line: 1,
            detail: "first column must be 't'".into(),
        });
    }
    let mut d = 0usize;
    let mut m = 0usize;
    for &c in &columns[1..] {
        if let Some(rest) = c.strip_prefix('x') {
            if m > 0 {
                return Err(Error::Parse {
                    line: 1,
                    detail: "x columns must precede y columns".into(),
                });
            }
            d += 1;
            if rest.parse::<usize>() != Ok(d) {
                return Err(Error::Parse {
                    line: 1,
                    detail: format!("expected column 'x{d}', found {c:?}"),
                });
            }
        } else if let Some(rest) = c.strip_prefix('y') {
            m += 1;
            if rest.parse::<usize>() != Ok(m) {
                return Err(Error::Parse {
                    line: 1,
                    detail: format!("expected column 'y{m}', found {c:?}"),
                });
            }
        } else {
            return Err(Error::Parse {
                line: 1,
                detail: format!("unrecognized column {c:?}"),
            });
        }
    }
    if d == 0 || m == 0 {
        return Err(Error::Parse {
            line: 1,
            detail: format!("header needs x and y columns, found d = {d}, m = {m}"),
        });
    }
    Ok((d, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn theta_star_bundled() -> DVector<f64> {
        DVector::from_row_slice(&[0.0, 1.0, 0.0, 1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn zero_diffusion_paths_are_constant() {
        let mut spec = ModelSpec::sin_exp(3);
        spec.covariate = CovariateDiffusion::Constant { c: 0.0 };
        spec.x0 = vec![0.4, -1.0, 2.5];
        let paths = simulate_paths(&spec, 5, 4, 99).unwrap();
        for i in 0..=paths.fine_steps() {
            assert_eq!(paths.x_fine[(i, 0)], 0.4);
            assert_eq!(paths.x_fine[(i, 1)], -1.0);
            assert_eq!(paths.x_fine[(i, 2)], 2.5);
        }
    }

    #[test]
    fn single_euler_step_matches_hand_computation() {
        // One step of X' = x0 + c·δw with c = 1.5, x0 = 0.7, δw = 0.3.
        let mut spec = ModelSpec::sin_exp(1);
        spec.covariate = CovariateDiffusion::Constant { c: 1.5 };
        spec.x0 = vec![0.7];
        let increments = DMatrix::from_row_slice(1, 2, &[0.3, 0.0]);
        let paths = simulate_paths_from_increments(&spec, 1, 1, increments).unwrap();
        assert_eq!(paths.x_fine[(1, 0)], 0.7 + 1.5 * 0.3);
        assert_eq!(paths.x_fine[(1, 0)], 1.15);
    }

    #[test]
    fn zero_volatility_integrand_keeps_y_at_start() {
        // Constant-vol model with θ-independent σ, but zero Y-driver
        // increments: Y stays at y0 no matter the covariates.
        let spec = ModelSpec::sin_exp(2);
        let n = 4;
        let kappa = 3;
        let mut increments = DMatrix::zeros(n * kappa, 3);
        for i in 0..n * kappa {
            increments[(i, 0)] = 0.01;
            increments[(i, 1)] = -0.02;
            // Column 2 (the Y driver) stays zero.
        }
        let paths = simulate_paths_from_increments(&spec, n, kappa, increments).unwrap();
        let theta = DVector::from_row_slice(&[0.5, -0.5]);
        let ds = simulate_observation(&spec, &theta, &paths).unwrap();
        for j in 0..=n {
            assert_eq!(ds.y_obs[(j, 0)], 0.0);
        }
    }

    #[test]
    fn subsampling_matches_fine_grid_exactly() {
        let spec = ModelSpec::sin_exp(10);
        let paths = simulate_paths(&spec, 8, 7, 2024).unwrap();
        let ds = simulate_observation(&spec, &theta_star_bundled(), &paths).unwrap();
        for j in 0..=8 {
            for k in 0..10 {
                assert_eq!(ds.x_obs[(j, k)], paths.x_fine[(j * 7, k)]);
            }
        }
        assert_eq!(ds.n, 8);
        assert_relative_eq!(ds.h(), 0.125);
    }

    #[test]
    fn simulation_is_deterministic_in_the_seed() {
        let spec = ModelSpec::sin_exp(4);
        let theta = DVector::from_row_slice(&[0.0, 1.0, 0.5, -0.25]);
        let a = simulate_observation(&spec, &theta, &simulate_paths(&spec, 20, 5, 7).unwrap())
            .unwrap();
        let b = simulate_observation(&spec, &theta, &simulate_paths(&spec, 20, 5, 7).unwrap())
            .unwrap();
        assert_eq!(a.x_obs, b.x_obs);
        assert_eq!(a.y_obs, b.y_obs);
        let c = simulate_observation(&spec, &theta, &simulate_paths(&spec, 20, 5, 8).unwrap())
            .unwrap();
        assert_ne!(a.y_obs, c.y_obs);
    }

    #[test]
    fn theta_outside_box_is_a_domain_error() {
        let spec = ModelSpec::sin_exp(2);
        let paths = simulate_paths(&spec, 3, 2, 1).unwrap();
        let theta = DVector::from_row_slice(&[DEFAULT_BOX_HALF_WIDTH + 1.0, 0.0]);
        match simulate_observation(&spec, &theta, &paths) {
            Err(Error::Domain(_)) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn sigma_closed_forms() {
        let spec = ModelSpec::sin_exp(2);
        let theta = DVector::from_row_slice(&[1.0, -2.0]);
        let x = [std::f64::consts::FRAC_PI_2, 0.0];
        // σ = exp(1·sin(π/2) + (−2)·sin(0)) = e.
        assert_relative_eq!(spec.sigma(&x, &theta), std::f64::consts::E, epsilon = 1e-15);
        let const_spec = ModelSpec::constant_vol(2, 2, 3.0);
        assert_relative_eq!(const_spec.sigma(&x, &theta), 3.0);
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut spec = ModelSpec::sin_exp(2);
        spec.p = 3;
        assert!(spec.validate().is_err());

        let mut spec = ModelSpec::sin_exp(2);
        spec.theta_box[1] = (1.0, 1.0);
        assert!(spec.validate().is_err());

        let spec = ModelSpec::constant_vol(1, 1, 0.0);
        assert!(spec.validate().is_err());

        let mut spec = ModelSpec::sin_exp(2);
        spec.m = 2;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let spec = ModelSpec::sin_exp(3);
        let theta = DVector::from_row_slice(&[0.1, -0.2, 0.3]);
        let paths = simulate_paths(&spec, 25, 4, 31).unwrap();
        let ds = simulate_observation(&spec, &theta, &paths).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.n, ds.n);
        assert_eq!(loaded.times, ds.times);
        assert_eq!(loaded.x_obs, ds.x_obs);
        assert_eq!(loaded.y_obs, ds.y_obs);
        match loaded.provenance {
            Provenance::Ingested { .. } => {}
            other => panic!("expected ingested provenance, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_decreasing_times() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x1,y1\n0.0,1.0,2.0\n0.5,1.0,2.0\n0.25,1.0,2.0\n").unwrap();
        match load_dataset(&path) {
            Err(Error::Validation(msg)) => assert!(msg.contains("increasing"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_short_rows_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x1,x2,y1\n0.0,1.0,2.0,3.0\n0.5,1.0,3.0\n").unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, detail }) => {
                assert_eq!(line, 3);
                assert!(detail.contains("expected 4 columns, found 3"), "{detail}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_non_numeric_fields_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,x1,y1\n0.0,1.0,2.0\n0.5,abc,2.0\n").unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_malformed_headers() {
        let dir = tempfile::tempdir().unwrap();
        for header in ["time,x1,y1", "t,x1,x3,y1", "t,y1,x1", "t,x1", "t,y1"] {
            let path = dir.path().join("hdr.csv");
            std::fs::write(&path, format!("{header}\n0.0,1.0,2.0\n")).unwrap();
            match load_dataset(&path) {
                Err(Error::Parse { line: 1, .. }) => {}
                other => panic!("header {header:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn prescribed_increment_shape_is_checked() {
        let spec = ModelSpec::sin_exp(2);
        let bad = DMatrix::zeros(5, 2); // should be 6×3 for n=3, κ=2
        assert!(simulate_paths_from_increments(&spec, 3, 2, bad).is_err());
    }
}
