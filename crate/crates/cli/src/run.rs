//! Experiment pipelines and result persistence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mfsde::expansion::{
    compute_constants, estimate_order, fit_expansion, least_squares_slope, quadrature_expansion_check, richardson,
    richardson_windows,
};
use mfsde::gridrng::{TimeGrid, GENERATOR_ID};
use mfsde::law::{euler_terminal_law, exact_law, master_pde_residual};
use mfsde::particles::estimate_functional_traced;
use mfsde::{Error as EngineError, GaussianLaw, MeasureFunctional, Model};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, Result};
use crate::report::{loglog_svg, Cell, Series, Table};

pub const RESULTS_FILE: &str = "results.csv";
pub const FIT_FILE: &str = "fit.json";
pub const RECORD_FILE: &str = "record.json";
pub const CHART_FILE: &str = "chart.svg";
pub const TRACE_FILE: &str = "stats_trace.csv";

/// Fitted and derived quantities of a run; unused fields stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FitSummary {
    /// `U(μ_T)` from the exact law, when available.
    pub reference_value: Option<f64>,
    /// `Ĉ_1..Ĉ_K` of `error(n) ≈ Σ Ĉ_i / n^i`.
    pub coefficients: Vec<f64>,
    pub residual_norm: Option<f64>,
    pub condition: Option<f64>,
    /// Convergence orders or log–log slopes, keyed by series.
    pub slopes: BTreeMap<String, f64>,
    /// Scalar pass/fail style diagnostics (maxima, minima, ratios).
    pub checks: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// In-memory result of a pipeline, before anything touches the disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub table: Table,
    pub fit: FitSummary,
    pub chart: Option<Chart>,
    pub trace: Option<Table>,
    pub summary: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub version: String,
    pub generator: String,
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub results: Table,
    pub fit: FitSummary,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub svg: bool,
}

/// SHA-256 of the canonical JSON form (keys sorted, no whitespace).
pub fn config_digest(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_value(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

/// Runs the pipeline for `config.kind` without writing files.
pub fn execute(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    match config.kind {
        ExperimentKind::Constants => constants(config),
        ExperimentKind::QuadratureCheck => quadrature_check(config),
        ExperimentKind::Converge => converge(config, false),
        ExperimentKind::Extrapolate => converge(config, true),
        ExperimentKind::MasterPdeCheck => master_pde_check(config),
        ExperimentKind::ParticleConverge => particle_converge(config),
    }
}

/// Executes and persists a run. On failure nothing is left behind in
/// `options.out_dir`.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<(RunRecord, Outcome)> {
    let started = Instant::now();
    let outcome = execute(config)?;

    let mut files: Vec<(&str, String)> = vec![(RESULTS_FILE, outcome.table.to_csv()), (FIT_FILE, to_json(&outcome.fit))];
    if let Some(trace) = &outcome.trace {
        files.push((TRACE_FILE, trace.to_csv()));
    }
    if options.svg {
        if let Some(svg) = outcome
            .chart
            .as_ref()
            .and_then(|c| loglog_svg(&c.title, &c.x_label, &c.y_label, &c.series))
        {
            files.push((CHART_FILE, svg));
        }
    }
    let mut names: Vec<String> = files.iter().map(|(name, _)| name.to_string()).collect();
    names.push(RECORD_FILE.to_string());
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION").to_string(),
        generator: GENERATOR_ID.to_string(),
        config_digest: config_digest(config),
        config: config.clone(),
        results: outcome.table.clone(),
        fit: outcome.fit.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        files: names,
    };
    files.push((RECORD_FILE, to_json(&record)));
    write_all(&options.out_dir, &files)?;
    Ok((record, outcome))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    let created_dir = !dir.exists();
    let io_err = |path: &Path, source| CliError::Io { path: path.to_path_buf(), source };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        if let Err(e) = std::fs::write(&path, contents) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            let _ = std::fs::remove_file(&path);
            if created_dir {
                let _ = std::fs::remove_dir(dir);
            }
            return Err(io_err(&path, e));
        }
        written.push(path);
    }
    Ok(())
}

fn constants(config: &ExperimentConfig) -> Result<Outcome> {
    let order = config.order.expect("validated");
    let table_data = compute_constants(order);
    let mut table = Table::new(&["index", "alpha", "alpha_decimal", "beta", "beta_decimal"]);
    for row in table_data.rows() {
        table.push(vec![row.index.into(), row.alpha.into(), row.alpha_decimal.into(), row.beta.into(), row.beta_decimal.into()]);
    }
    let summary = table.to_text();
    Ok(Outcome { table, fit: FitSummary::default(), chart: None, trace: None, summary })
}

fn quadrature_check(config: &ExperimentConfig) -> Result<Outcome> {
    let f = config.test_function()?;
    let terms = config.terms.expect("validated");
    let mut table = Table::new(&["power", "n", "residual", "scaled_residual"]);
    let mut fit = FitSummary::default();
    let mut series = Vec::new();
    let mut worst: f64 = 0.0;
    for &i in &config.powers {
        let mut raw_pts = Vec::new();
        let mut scaled_pts = Vec::new();
        for &n in &config.levels {
            let grid = TimeGrid::new(config.horizon, n)?;
            let r = quadrature_expansion_check(&f, i, terms, &grid)?;
            table.push(vec![i.into(), n.into(), r.raw.into(), r.scaled.into()]);
            raw_pts.push((n as f64, r.raw));
            scaled_pts.push((n as f64, r.scaled));
            worst = worst.max(r.scaled.abs());
        }
        for (tag, pts) in [("raw", &raw_pts), ("scaled", &scaled_pts)] {
            match log_log_slope(pts) {
                Some(slope) => {
                    fit.slopes.insert(format!("power_{i}_{tag}"), slope);
                }
                None => fit.notes.push(format!("power {i}: {tag} residual vanishes at some level; no slope")),
            }
        }
        series.push(Series { label: format!("i = {i}"), points: scaled_pts });
    }
    fit.checks.insert("max_abs_scaled_residual".into(), worst);
    let mut summary = table.to_text();
    append_map(&mut summary, "slope", &fit.slopes);
    let chart = Chart {
        title: format!("quadrature residual, f(t) = {f}, m = {terms}"),
        x_label: "n".into(),
        y_label: "|residual| / eps^i".into(),
        series,
    };
    Ok(Outcome { table, fit, chart: Some(chart), trace: None, summary })
}

/// Slope of `log|y|` against `log x`; `None` if any `y` is zero.
fn log_log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 || pts.iter().any(|p| p.1 == 0.0 || !p.1.is_finite()) {
        return None;
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x.ln(), y.abs().ln())).collect();
    Some(least_squares_slope(&logs))
}

struct LawErrors {
    reference: f64,
    values: Vec<f64>,
    errors: Vec<f64>,
}

/// `U(μ^n_T)` for every level and the exact `U(μ_T)`.
fn law_errors(model: &Model, functional: &MeasureFunctional, initial: &GaussianLaw, config: &ExperimentConfig) -> Result<LawErrors> {
    let reference = functional.evaluate(&exact_law(model, initial, config.horizon)?)?;
    let values = config
        .levels
        .par_iter()
        .map(|&n| {
            let grid = TimeGrid::new(config.horizon, n)?;
            functional.evaluate(&euler_terminal_law(model, initial, &grid)?)
        })
        .collect::<std::result::Result<Vec<f64>, EngineError>>()?;
    let errors = values.iter().map(|v| v - reference).collect();
    Ok(LawErrors { reference, values, errors })
}

/// Order estimate and expansion fit of `(n, error)` pairs. Degenerate data
/// (an exact scheme, too few levels) is recorded as a note, not an error.
fn fit_errors(pairs: &[(usize, f64)], order: usize, fit: &mut FitSummary, slope_key: &str) {
    match estimate_order(pairs) {
        Ok(p) => {
            fit.slopes.insert(slope_key.to_string(), p);
        }
        Err(e) => fit.notes.push(format!("{slope_key}: {e}")),
    }
    match fit_expansion(pairs, order) {
        Ok(f) => {
            fit.coefficients = f.coefficients;
            fit.residual_norm = Some(f.residual_norm);
            fit.condition = Some(f.condition);
        }
        Err(e) => fit.notes.push(format!("expansion fit: {e}")),
    }
}

fn converge(config: &ExperimentConfig, extrapolate: bool) -> Result<Outcome> {
    let model = config.model()?;
    let functional = config.functional()?;
    let initial = config.gaussian_initial()?;
    let law = law_errors(&model, &functional, &initial, config)?;
    let levels = &config.levels;

    let mut fit = FitSummary { reference_value: Some(law.reference), ..Default::default() };
    let pairs: Vec<(usize, f64)> = levels.iter().copied().zip(law.errors.iter().copied()).collect();
    fit_errors(&pairs, config.fit_order, &mut fit, "raw");

    let mut series = vec![Series { label: "raw".into(), points: pairs.iter().map(|&(n, e)| (n as f64, e)).collect() }];
    let table = if extrapolate {
        let mut table = Table::new(&["k", "n", "value", "error"]);
        for (&n, (&v, &e)) in levels.iter().zip(law.values.iter().zip(&law.errors)) {
            table.push(vec![1usize.into(), n.into(), v.into(), e.into()]);
        }
        for &k in config.richardson.iter().filter(|&&k| k > 1) {
            // combining the errors directly avoids cancellation against U(μ_T)
            let values = richardson_windows(&law.values, levels, k)?;
            let errors = richardson_windows(&law.errors, levels, k)?;
            for ((n, v), (_, e)) in values.iter().zip(&errors) {
                table.push(vec![k.into(), (*n).into(), (*v).into(), (*e).into()]);
            }
            if errors.len() >= 2 {
                match estimate_order(&errors) {
                    Ok(p) => {
                        fit.slopes.insert(format!("k{k}"), p);
                    }
                    Err(e) => fit.notes.push(format!("k{k}: {e}")),
                }
            }
            let full = richardson(&law.errors, levels, k)?;
            fit.checks.insert(format!("k{k}_finest_error"), full.value);
            series.push(Series { label: format!("k = {k}"), points: errors.iter().map(|&(n, e)| (n as f64, e)).collect() });
        }
        table
    } else {
        let mut table = Table::new(&["n", "value", "error"]);
        for (&n, (&v, &e)) in levels.iter().zip(law.values.iter().zip(&law.errors)) {
            table.push(vec![n.into(), v.into(), e.into()]);
        }
        table
    };

    let mut summary = table.to_text();
    let _ = writeln!(summary, "reference U(mu_T) = {}", law.reference);
    append_map(&mut summary, "order", &fit.slopes);
    for (i, c) in fit.coefficients.iter().enumerate() {
        let _ = writeln!(summary, "C_{} = {c}", i + 1);
    }
    let chart = Chart {
        title: format!("weak error, {} / {}", model.name(), functional.name()),
        x_label: "n".into(),
        y_label: "|error|".into(),
        series,
    };
    Ok(Outcome { table, fit, chart: Some(chart), trace: None, summary })
}

fn master_pde_check(config: &ExperimentConfig) -> Result<Outcome> {
    let model = config.model()?;
    let functional = config.functional()?;
    let h = config.fd_step;
    let mut table = Table::new(&["r", "mean", "variance", "fd_step", "residual", "residual_half_step", "ratio"]);
    let mut worst: f64 = 0.0;
    let mut min_ratio = f64::INFINITY;
    for &r in &config.times {
        for law in &config.laws {
            let full = master_pde_residual(&model, &functional, r, law, config.horizon, h)?;
            let half = master_pde_residual(&model, &functional, r, law, config.horizon, h / 2.0)?;
            let ratio = full.abs() / half.abs();
            worst = worst.max(full.abs());
            min_ratio = min_ratio.min(ratio);
            table.push(vec![r.into(), law.mean().into(), law.variance().into(), h.into(), full.into(), half.into(), ratio.into()]);
        }
    }
    let mut fit = FitSummary::default();
    fit.checks.insert("max_abs_residual".into(), worst);
    fit.checks.insert("min_halving_ratio".into(), min_ratio);
    let mut summary = table.to_text();
    append_map(&mut summary, "check", &fit.checks);
    Ok(Outcome { table, fit, chart: None, trace: None, summary })
}

fn particle_converge(config: &ExperimentConfig) -> Result<Outcome> {
    let plan = config.simulation_plan()?;
    let functional = config.functional()?;
    let (estimates, trace_rows) = estimate_functional_traced(&plan, &functional, config.diagnostics)?;

    // the Gaussian law engine supplies the truth for affine models
    let gaussian = config.initial.as_gaussian().filter(|_| plan.model.is_affine()).copied();
    let reference = gaussian
        .map(|g| functional.evaluate(&exact_law(&plan.model, &g, plan.horizon)?))
        .transpose()?;
    let euler_values: Vec<Option<f64>> = plan
        .levels
        .iter()
        .map(|&n| {
            gaussian
                .map(|g| functional.evaluate(&euler_terminal_law(&plan.model, &g, &TimeGrid::new(plan.horizon, n)?)?))
                .transpose()
        })
        .collect::<std::result::Result<_, EngineError>>()?;

    let mut table = Table::new(&["n", "value", "error", "stderr", "euler_law_value"]);
    let mut pairs = Vec::new();
    for (est, law_value) in estimates.iter().zip(&euler_values) {
        let error = reference.map(|r| est.value - r);
        if let Some(e) = error {
            pairs.push((est.level, e));
        }
        table.push(vec![est.level.into(), est.value.into(), error.into(), est.stderr.into(), (*law_value).into()]);
    }
    let mut fit = FitSummary { reference_value: reference, ..Default::default() };
    if reference.is_some() {
        fit_errors(&pairs, config.fit_order.min(pairs.len()), &mut fit, "raw");
        let worst_z = estimates
            .iter()
            .zip(&euler_values)
            .filter_map(|(est, lv)| lv.map(|lv| (est.value - lv).abs() / est.stderr))
            .fold(0.0, f64::max);
        fit.checks.insert("max_abs_z_vs_euler_law".into(), worst_z);
    } else {
        fit.notes.push("no exact law for this model or initial condition; errors left empty".into());
    }

    let trace = config.diagnostics.then(|| {
        let stat_columns: Vec<String> = (1..=plan.model.stat_spec().len()).map(|j| format!("stat_{j}")).collect();
        let mut columns = vec!["level", "replication", "step", "t"];
        columns.extend(stat_columns.iter().map(String::as_str));
        let mut table = Table::new(&columns);
        for row in &trace_rows {
            let mut cells = vec![row.level.into(), row.replication.into(), row.step.into(), row.t.into()];
            cells.extend(row.stats.iter().map(|&s| Cell::from(s)));
            table.push(cells);
        }
        table
    });

    let mut summary = table.to_text();
    append_map(&mut summary, "order", &fit.slopes);
    append_map(&mut summary, "check", &fit.checks);
    let chart = reference.map(|_| Chart {
        title: format!("particle weak error, {} / {}, m = {}", plan.model.name(), functional.name(), plan.particles),
        x_label: "n".into(),
        y_label: "|error|".into(),
        series: vec![Series { label: "estimate".into(), points: pairs.iter().map(|&(n, e)| (n as f64, e)).collect() }],
    });
    Ok(Outcome { table, fit, chart, trace, summary })
}

fn append_map(out: &mut String, label: &str, map: &BTreeMap<String, f64>) {
    for (k, v) in map {
        let _ = writeln!(out, "{label} {k} = {v}");
    }
}
