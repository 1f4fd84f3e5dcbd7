//! Subcommand implementations. Every file the commands emit embeds the
//! master seed and a schema version so artifacts remain traceable to
//! the configuration that produced them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use pqla_core::{
    chi0_estimate, laq_decompose, load_dataset, moment_estimate, penalized_qmle,
    pldi_tail_estimate, qbe, qmle, run_study, save_dataset, simulate_observation, simulate_paths,
    verify_conditions, Error, EstimationResult, LqaOptions, McmcDiagnostics, McmcOptions, Method,
    NewtonOptions, PldiConfig, Result, TailCurve,
};
use serde::Serialize;

use crate::config::{load_config, FileConfig, OutputFormat, SCHEMA_VERSION};
use crate::svg;
use crate::CheckArg;

/// Common wrapper for diagnostic JSON outputs.
#[derive(Serialize)]
struct Envelope<T: Serialize> {
    schema_version: u32,
    master_seed: u64,
    check: &'static str,
    payload: T,
}

fn envelope<T: Serialize>(cfg: &FileConfig, check: &'static str, payload: T) -> Envelope<T> {
    Envelope {
        schema_version: SCHEMA_VERSION,
        master_seed: cfg.experiment.master_seed,
        check,
        payload,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Configuration(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Configuration(format!("serializing {}: {e}", path.display())))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Two comment lines tagging CSV artifacts with provenance.
fn csv_prelude<W: Write>(w: &mut W, master_seed: u64) -> std::io::Result<()> {
    writeln!(w, "# schema_version,{SCHEMA_VERSION}")?;
    writeln!(w, "# master_seed,{master_seed}")
}

/// Worker-count resolution order: command-line flag, then the
/// `PQLA_WORKERS` environment variable, then the config (0 = automatic).
fn resolve_workers(flag: Option<usize>, cfg: &FileConfig) -> Result<usize> {
    if let Some(w) = flag {
        return Ok(w);
    }
    match std::env::var("PQLA_WORKERS") {
        Ok(s) => s.trim().parse::<usize>().map_err(|_| {
            Error::Configuration(format!(
                "PQLA_WORKERS must be a non-negative integer, got {s:?}"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(cfg.experiment.workers),
        Err(e) => Err(Error::Configuration(format!("PQLA_WORKERS: {e}"))),
    }
}

pub fn cmd_simulate(
    config_path: &Path,
    seed: Option<u64>,
    n: Option<usize>,
    out: Option<PathBuf>,
    quiet: bool,
) -> Result<u8> {
    let cfg = load_config(config_path)?;
    let exp = &cfg.experiment;
    let n = n.unwrap_or(exp.n_grid[0]);
    if n == 0 {
        return Err(Error::Configuration("--n must be positive".into()));
    }
    let seed = seed.unwrap_or(exp.master_seed);
    let theta = exp.theta_star_vector();
    let paths = simulate_paths(&exp.model, n, exp.refinement, seed)?;
    let ds = simulate_observation(&exp.model, &theta, &paths)?;
    let path = out.unwrap_or_else(|| cfg.output.dir.join(format!("dataset_n{n}_seed{seed}.csv")));
    ensure_parent(&path)?;
    save_dataset(&ds, &path)?;
    if !quiet && cfg.output.verbosity > 0 {
        println!("wrote {} ({} data rows, seed {seed})", path.display(), n + 1);
    }
    Ok(0)
}

/// Readable flattening of an estimation result for the output file.
#[derive(Serialize)]
struct EstimateReport {
    schema_version: u32,
    master_seed: u64,
    method: String,
    dataset: String,
    theta_hat: Vec<f64>,
    theta_init: Vec<f64>,
    active_set: Vec<usize>,
    iterations: usize,
    grad_norm: f64,
    objective: f64,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    mcmc: Option<McmcDiagnostics>,
}

impl EstimateReport {
    fn new(cfg: &FileConfig, dataset: &Path, result: &EstimationResult) -> Self {
        EstimateReport {
            schema_version: SCHEMA_VERSION,
            master_seed: cfg.experiment.master_seed,
            method: result.method.to_string(),
            dataset: dataset.display().to_string(),
            theta_hat: result.theta_hat.iter().cloned().collect(),
            theta_init: result.theta_init.iter().cloned().collect(),
            active_set: result.active_set.clone(),
            iterations: result.iterations,
            grad_norm: result.grad_norm,
            objective: result.objective,
            converged: result.converged,
            mcmc: result.mcmc.clone(),
        }
    }
}

pub fn cmd_estimate(
    config_path: &Path,
    data: &Path,
    method: Method,
    max_iter: Option<usize>,
    out: Option<PathBuf>,
    quiet: bool,
) -> Result<u8> {
    let cfg = load_config(config_path)?;
    let exp = &cfg.experiment;
    let ds = load_dataset(data)?;
    let result = match method {
        Method::Qmle => {
            let mut opts = NewtonOptions::default();
            if let Some(m) = max_iter {
                opts.max_iter = m;
            }
            qmle(&ds, &exp.model, None, &opts)?
        }
        Method::Penalized => {
            let mut opts = LqaOptions::default();
            if let Some(m) = max_iter {
                opts.max_iter = m;
            }
            let rates = exp.rate_spec();
            penalized_qmle(&ds, &exp.model, &exp.penalty, &rates, None, &opts)?
        }
        Method::Qbe => {
            let mut opts = McmcOptions {
                seed: exp.master_seed,
                ..McmcOptions::default()
            };
            if let Some(m) = max_iter {
                opts.iterations = m;
                opts.burn_in = m / 4;
                opts.adapt_steps = opts.adapt_steps.min(opts.burn_in);
            }
            qbe(&ds, &exp.model, None, &opts)?
        }
    };
    let path = out.unwrap_or_else(|| cfg.output.dir.join(format!("estimate_{method}.json")));
    let report = EstimateReport::new(&cfg, data, &result);
    write_json(&path, &report)?;
    if !quiet && cfg.output.verbosity > 0 {
        let coords: Vec<String> = report.theta_hat.iter().map(|v| format!("{v:.4}")).collect();
        println!("theta_hat = [{}]", coords.join(", "));
        println!("active_set = {:?}", report.active_set);
        println!("wrote {}", path.display());
    }
    if result.converged {
        Ok(0)
    } else {
        eprintln!("warning: estimator did not converge (result written anyway)");
        Ok(4)
    }
}

pub fn cmd_study(
    config_path: &Path,
    workers: Option<usize>,
    out_dir: Option<PathBuf>,
    quiet: bool,
) -> Result<u8> {
    let cfg = load_config(config_path)?;
    let mut exp = cfg.experiment.clone();
    exp.workers = resolve_workers(workers, &cfg)?;
    let report = run_study(&exp)?;
    let dir = out_dir.unwrap_or_else(|| cfg.output.dir.clone());
    ensure_dir(&dir)?;
    let mut written = Vec::new();
    if cfg.wants(OutputFormat::Json) {
        let path = dir.join("report.json");
        let mut w = BufWriter::new(File::create(&path)?);
        report.write_json(&mut w)?;
        w.flush()?;
        written.push(path);
    }
    if cfg.wants(OutputFormat::Csv) {
        let path = dir.join("report.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        csv_prelude(&mut w, exp.master_seed)?;
        report.write_csv(&mut w)?;
        w.flush()?;
        written.push(path);
    }
    if cfg.wants(OutputFormat::Svg) {
        match svg::selection_chart(&report) {
            Some(text) => {
                let path = dir.join("report.svg");
                ensure_parent(&path)?;
                fs::write(&path, text)?;
                written.push(path);
            }
            None => eprintln!("note: report holds no selection rates; SVG skipped"),
        }
    }
    if !quiet && cfg.output.verbosity > 0 {
        println!(
            "study: {} replications at each n in {:?} ({:.1}s)",
            exp.replications,
            exp.n_grid,
            report.total_runtime.as_secs_f64()
        );
        for p in &written {
            println!("wrote {}", p.display());
        }
    }
    Ok(0)
}

/// Fixed probe directions for the decomposition remainder: all signed
/// coordinate axes and the normalized all-ones diagonal, each at radii
/// 0.5, 1, 2.
fn probe_directions(p: usize) -> Vec<DVector<f64>> {
    let radii = [0.5, 1.0, 2.0];
    let mut dirs = Vec::new();
    for j in 0..p {
        for &r in &radii {
            for sign in [1.0f64, -1.0] {
                let mut u = DVector::zeros(p);
                u[j] = sign * r;
                dirs.push(u);
            }
        }
    }
    let diag = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    for &r in &radii {
        for sign in [1.0f64, -1.0] {
            dirs.push(&diag * (sign * r));
        }
    }
    dirs
}

#[derive(Serialize)]
struct LaqEntry {
    n: usize,
    value_at_star: f64,
    sup_abs_remainder: f64,
    mean_abs_remainder: f64,
    probes_evaluated: usize,
    probes_skipped: usize,
}

#[derive(Serialize)]
struct PldiEntry {
    n: usize,
    curve: TailCurve,
}

#[derive(Serialize)]
struct MomentRow {
    estimator: String,
    n: usize,
    order: f64,
    samples: usize,
    estimate: f64,
}

#[derive(Serialize)]
struct Chi0Payload {
    n: usize,
    refinement: usize,
    budget: usize,
    chi0: f64,
}

pub fn cmd_diagnose(
    config_path: &Path,
    check: CheckArg,
    out_dir: Option<PathBuf>,
    quiet: bool,
) -> Result<u8> {
    let cfg = load_config(config_path)?;
    let dir = out_dir.unwrap_or_else(|| cfg.output.dir.clone());
    ensure_dir(&dir)?;
    let exp = &cfg.experiment;
    let theta = exp.theta_star_vector();
    let rates = exp.rate_spec();
    match check {
        CheckArg::Conditions => {
            let support = exp.truth();
            let report = verify_conditions(&exp.penalty, &rates, &exp.n_grid, &support)?;
            let path = dir.join("conditions.json");
            write_json(&path, &envelope(&cfg, "conditions", &report))?;
            if !quiet {
                for c in &report.checks {
                    println!(
                        "[{}] {} — {}",
                        c.name,
                        if c.pass { "pass" } else { "FAIL" },
                        c.note
                    );
                }
                let betas: Vec<String> = report
                    .beta
                    .iter()
                    .map(|(j, b)| format!("beta_{} = {b}", j + 1))
                    .collect();
                if !betas.is_empty() {
                    println!("limits: {}", betas.join(", "));
                }
                println!(
                    "overall: {}",
                    if report.all_pass { "pass" } else { "FAIL" }
                );
                println!("wrote {}", path.display());
            }
        }
        CheckArg::Pldi => {
            let r_grid = [1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 10.0, 16.0];
            // The exceedance fractions need a minimal Monte Carlo sample
            // to mean anything, so thin study configs are topped up.
            let reps = exp.replications.max(50);
            let mut entries = Vec::new();
            for &n in &exp.n_grid {
                let pc = PldiConfig {
                    model: &exp.model,
                    theta_star: theta.clone(),
                    n,
                    refinement: exp.refinement,
                    rates: &rates,
                    penalty: Some(&exp.penalty),
                    seed: exp.master_seed,
                };
                let curve = pldi_tail_estimate(&pc, &r_grid, 0.5, reps, true)?;
                let path = dir.join(format!("pldi_n{n}.csv"));
                let mut w = BufWriter::new(File::create(&path)?);
                csv_prelude(&mut w, exp.master_seed)?;
                curve.write_csv(&mut w)?;
                w.flush()?;
                if !quiet {
                    let tails: Vec<String> = r_grid
                        .iter()
                        .zip(&curve.smoothed)
                        .map(|(r, p)| format!("P(r={r}) = {p:.4}"))
                        .collect();
                    println!("pldi n={n}: {}", tails.join(", "));
                    if let Some(k) = curve.decay_exponent {
                        println!("pldi n={n}: fitted decay order {k:.2}");
                    }
                }
                entries.push(PldiEntry { n, curve });
            }
            let path = dir.join("pldi.json");
            write_json(&path, &envelope(&cfg, "pldi", &entries))?;
            if !quiet {
                println!("wrote {}", path.display());
            }
        }
        CheckArg::Laq => {
            let mut entries = Vec::new();
            for &n in &exp.n_grid {
                let paths = simulate_paths(&exp.model, n, exp.refinement, exp.master_seed)?;
                let ds = simulate_observation(&exp.model, &theta, &paths)?;
                let dec = laq_decompose(&ds, &exp.model, &theta, &rates)?;
                let mut sup = 0.0f64;
                let mut sum = 0.0f64;
                let mut used = 0usize;
                let mut skipped = 0usize;
                for u in probe_directions(exp.model.p) {
                    match dec.remainder(&u) {
                        Ok(r) => {
                            sup = sup.max(r.abs());
                            sum += r.abs();
                            used += 1;
                        }
                        Err(_) => skipped += 1,
                    }
                }
                if !quiet {
                    println!("laq n={n}: sup |r_n(u)| = {sup:.6} over {used} probes");
                }
                entries.push(LaqEntry {
                    n,
                    value_at_star: dec.value_at_star,
                    sup_abs_remainder: sup,
                    mean_abs_remainder: sum / used.max(1) as f64,
                    probes_evaluated: used,
                    probes_skipped: skipped,
                });
            }
            let path = dir.join("laq.json");
            write_json(&path, &envelope(&cfg, "laq", &entries))?;
            if !quiet {
                println!("wrote {}", path.display());
            }
        }
        CheckArg::Moments => {
            let mut study_cfg = exp.clone();
            study_cfg.workers = resolve_workers(None, &cfg)?;
            let report = run_study(&study_cfg)?;
            let mut rows = Vec::new();
            for &n in &exp.n_grid {
                for &method in &exp.estimators {
                    let results: Vec<EstimationResult> = report
                        .records
                        .iter()
                        .filter(|rec| rec.n == n)
                        .filter_map(|rec| rec.estimates.get(&method))
                        .filter_map(|o| o.result.clone())
                        .filter(|r| r.converged)
                        .collect();
                    if results.is_empty() {
                        continue;
                    }
                    for order in [2.0, 4.0] {
                        let estimate = moment_estimate(&results, &theta, &rates, n, order)?;
                        rows.push(MomentRow {
                            estimator: method.to_string(),
                            n,
                            order,
                            samples: results.len(),
                            estimate,
                        });
                    }
                }
            }
            let csv_path = dir.join("moments.csv");
            let mut w = BufWriter::new(File::create(&csv_path)?);
            csv_prelude(&mut w, exp.master_seed)?;
            writeln!(w, "estimator,n,order,samples,estimate")?;
            for row in &rows {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    row.estimator, row.n, row.order, row.samples, row.estimate
                )?;
            }
            w.flush()?;
            let json_path = dir.join("moments.json");
            write_json(&json_path, &envelope(&cfg, "moments", &rows))?;
            if !quiet {
                for row in &rows {
                    println!(
                        "moments {} n={}: E|u|^{} = {:.4} ({} samples)",
                        row.estimator, row.n, row.order, row.estimate, row.samples
                    );
                }
                println!("wrote {}", csv_path.display());
                println!("wrote {}", json_path.display());
            }
        }
        CheckArg::Chi0 => {
            let n = exp.n_grid[0];
            let budget = 32usize;
            let paths = simulate_paths(&exp.model, n, exp.refinement, exp.master_seed)?;
            let chi0 = chi0_estimate(&paths, &exp.model, &theta, budget)?;
            let path = dir.join("chi0.json");
            write_json(
                &path,
                &envelope(
                    &cfg,
                    "chi0",
                    Chi0Payload {
                        n,
                        refinement: exp.refinement,
                        budget,
                        chi0,
                    },
                ),
            )?;
            if !quiet {
                println!("chi0 = {chi0:.6} (n={n}, one realized path)");
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(0)
}
