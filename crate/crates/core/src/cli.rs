//! The `obstacle` command line.
//!
//! CSV goes to stdout; side reports go to `--json PATH`, or stderr when no
//! path is given. `stationarity` and `ssc` print their JSON report to stdout.
//! Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 a
//! counterexample whose non-optimality was not confirmed.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Config, Problem};
use crate::counterexamples::{build, logspace, verify_nonoptimality, CounterexampleId, Params};
use crate::error::Error;
use crate::optimizer::{solve_general, solve_subharmonic, DescentOptions, QpOptions};
use crate::ssc::{
    certify_compat_global, certify_compat_local, certify_enhanced_global, certify_enhanced_local,
    certify_subharmonic_convex, SscOptions,
};
use crate::stationarity::{assemble_bundle, check_strong_stationarity, objective};
use crate::vi::{solve_obstacle, NodeClass};

#[derive(Parser, Debug)]
#[command(name = "obstacle", version, about = "Optimal control of the obstacle problem")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TheoremArg {
    CompatLocal,
    CompatGlobal,
    EnhancedLocal,
    EnhancedGlobal,
    Subharmonic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Subharmonic,
    General,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Solve the obstacle problem for the configured control; CSV per node.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Strong-stationarity residuals of the configured control (JSON).
    Stationarity {
        #[arg(long)]
        config: PathBuf,
    },
    /// Second-order certificate for the configured control (JSON).
    Ssc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        theorem: TheoremArg,
    },
    /// Minimize the objective; trace CSV plus final JSON.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "subharmonic")]
        method: MethodArg,
        /// Number of active-set initializations (subharmonic method).
        #[arg(long, default_value_t = 1)]
        starts: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Non-optimality of a strongly stationary point; per-t CSV plus verdict JSON.
    Counterexample {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        id: u8,
        /// `r` for the first counterexample, `c` for the others.
        #[arg(long)]
        param: Option<f64>,
        /// `γ` of the first counterexample.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, requires = "tmax")]
        tmin: Option<f64>,
        #[arg(long, requires = "tmin")]
        tmax: Option<f64>,
        #[arg(long, default_value_t = 8)]
        tsteps: usize,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Sweep one parameter of a config in parallel; one CSV row per value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

enum Failure {
    Input(String),
    Solver(String),
    NotConfirmed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_)
            | Error::GridMismatch(_)
            | Error::NotAdmissible { .. }
            | Error::Precondition(_)
            | Error::DirectionOutsideCone { .. }
            | Error::Infeasible { .. } => Failure::Input(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Out<'a> = &'a mut dyn Write;

/// 17 significant digits, enough to round-trip.
fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn write_json(value: &impl Serialize, path: Option<&Path>, err: Out) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Solver(e.to_string()))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => writeln!(err, "{text}")?,
    }
    Ok(())
}

fn coord_names(p: &Problem) -> Vec<&'static str> {
    match p.grid.kind() {
        crate::GridKind::Interval => vec!["x"],
        crate::GridKind::Square => vec!["x", "y"],
        crate::GridKind::Radial => vec!["r"],
    }
}

fn class_name(c: NodeClass) -> &'static str {
    match c {
        NodeClass::Inactive => "inactive",
        NodeClass::StrictlyActive => "strictly_active",
        NodeClass::Biactive => "biactive",
    }
}

fn cmd_solve(config: &Path, json: Option<&Path>, out: Out, err: Out) -> Result<(), Failure> {
    let p = Config::load(config)?.build()?;
    let sol = solve_obstacle(&p.control, &p.psi)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = coord_names(&p);
    header.extend(["u", "psi", "y", "lambda", "slack", "class"]);
    w.write_record(&header)?;
    for i in 0..p.grid.len() {
        let mut row: Vec<String> = p.grid.point(i).iter().map(|&c| num(c)).collect();
        for v in [p.control.values()[i], p.psi.values().values()[i], sol.y.values()[i], sol.lambda.values()[i], sol.slack.values()[i]] {
            row.push(num(v));
        }
        row.push(class_name(sol.class[i]).into());
        w.write_record(&row)?;
    }
    w.flush()?;
    let report = json!({
        "kkt_residual": sol.kkt_residual,
        "diagnostics": sol.diagnostics,
        "inactive": sol.count(NodeClass::Inactive),
        "strictly_active": sol.count(NodeClass::StrictlyActive),
        "biactive": sol.count(NodeClass::Biactive),
    });
    write_json(&report, json, err)
}

fn cmd_stationarity(config: &Path, out: Out) -> Result<(), Failure> {
    let p = Config::load(config)?.build()?;
    let b = assemble_bundle(&p.spec, &p.control, &p.psi, &p.bounds)?;
    let r = check_strong_stationarity(&b);
    let report = json!({
        "residuals": r,
        "max": r.max(),
        "strongly_stationary": r.is_strongly_stationary(),
        "objective": objective(&p.spec, b.y_bar(), &b.u_bar)?,
        "kkt_residual": b.state.kkt_residual,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("plain data"))?;
    Ok(())
}

fn cmd_ssc(config: &Path, theorem: TheoremArg, out: Out) -> Result<(), Failure> {
    let cfg = Config::load(config)?;
    let p = cfg.build()?;
    let report = if let TheoremArg::Subharmonic = theorem {
        certify_subharmonic_convex(&p.spec, &p.psi, &p.bounds)
    } else {
        let b = assemble_bundle(&p.spec, &p.control, &p.psi, &p.bounds)?;
        let mut opts = SscOptions::for_bundle(&b)?;
        opts.seed = p.seed;
        if let Some(s) = cfg.ssc.samples {
            opts.samples = s;
        }
        match theorem {
            TheoremArg::CompatLocal => certify_compat_local(&b, &opts)?,
            TheoremArg::CompatGlobal => certify_compat_global(&b, &opts)?,
            TheoremArg::EnhancedLocal => certify_enhanced_local(&b, &opts)?,
            TheoremArg::EnhancedGlobal => certify_enhanced_global(&b, &opts)?,
            TheoremArg::Subharmonic => unreachable!(),
        }
    };
    writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("plain data"))?;
    Ok(())
}

fn cmd_optimize(config: &Path, method: MethodArg, starts: usize, json: Option<&Path>, out: Out, err: Out) -> Result<(), Failure> {
    let cfg = Config::load(config)?;
    let p = cfg.build()?;
    let mut w = csv::Writer::from_writer(out);
    match method {
        MethodArg::Subharmonic => {
            let opts = QpOptions { random_starts: starts.saturating_sub(1), seed: p.seed, ..QpOptions::default() };
            let (sol, diag) = solve_subharmonic(&p.spec, &p.psi, &p.bounds, &opts)?;
            w.write_record(["start", "iterations"])?;
            for (k, it) in diag.iterations.iter().enumerate() {
                w.write_record([k.to_string(), it.to_string()])?;
            }
            w.flush()?;
            write_json(&json!({"method": "subharmonic", "objective": sol.objective, "diagnostics": diag}), json, err)
        }
        MethodArg::General => {
            let mut opts = DescentOptions { seed: p.seed, ..DescentOptions::default() };
            if let Some(m) = cfg.optimize.max_iter {
                opts.max_iter = m;
            }
            if let Some(e) = cfg.optimize.escape {
                opts.escape = e;
            }
            if let Some(s) = cfg.optimize.sample_directions {
                opts.sample_directions = s;
            }
            let u0 = p.bounds.project(&p.control);
            let (sol, diag) = solve_general(&p.spec, &p.psi, &p.bounds, &u0, &opts)?;
            w.write_record(["iter", "objective", "step", "pg_norm", "gap", "escaped"])?;
            for r in &diag.trace {
                w.write_record([
                    r.iter.to_string(),
                    num(r.objective),
                    num(r.step),
                    num(r.pg_norm),
                    r.gap.map_or_else(String::new, num),
                    r.escaped.to_string(),
                ])?;
            }
            w.flush()?;
            let report = json!({
                "method": "general",
                "objective": sol.objective,
                "converged": diag.converged,
                "line_search_failed": diag.line_search_failed,
                "iterations": diag.iterations,
                "escapes": diag.escapes,
                "final_gap": diag.final_gap.as_ref().map(|g| g.min),
                "armijo": {"sigma": diag.sigma, "backtrack": diag.backtrack, "initial_step": diag.initial_step},
            });
            write_json(&report, json, err)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_counterexample(
    id: u8,
    param: Option<f64>,
    gamma: Option<f64>,
    n: Option<usize>,
    tmin: Option<f64>,
    tmax: Option<f64>,
    tsteps: usize,
    json: Option<&Path>,
    out: Out,
    err: Out,
) -> Result<(), Failure> {
    let cid = [CounterexampleId::Ce1, CounterexampleId::Ce2, CounterexampleId::Ce3][id as usize - 1];
    let params = match (Params::default_for(cid), param) {
        (Params::Ce1 { r, gamma: g }, p) => Params::Ce1 { r: p.unwrap_or(r), gamma: gamma.unwrap_or(g) },
        (Params::Ce2 { c }, p) => Params::Ce2 { c: p.unwrap_or(c) },
        (Params::Ce3 { c }, p) => Params::Ce3 { c: p.unwrap_or(c) },
    };
    if gamma.is_some() && cid != CounterexampleId::Ce1 {
        return Err(Failure::Input("--gamma applies to counterexample 1 only".into()));
    }
    let n = n.unwrap_or(if cid == CounterexampleId::Ce1 { 4095 } else { 2047 });
    let scn = build(params, n)?;
    let ts = match (tmin, tmax) {
        (Some(a), Some(b)) if a > 0.0 && b >= a && tsteps >= 1 => logspace(a, b, tsteps),
        (Some(_), Some(_)) => return Err(Failure::Input("need 0 < tmin <= tmax and tsteps >= 1".into())),
        _ => scn.default_t_grid(),
    };
    let report = verify_nonoptimality(&scn, &ts)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "control_dist", "gap_numeric", "gap_closed_form", "ratio_gap_over_t2"])?;
    for g in &report.gaps {
        w.write_record([
            num(g.t),
            num(g.control_dist),
            num(g.numeric),
            g.closed_form.value().map_or_else(String::new, num),
            num(g.numeric / (g.t * g.t)),
        ])?;
    }
    w.flush()?;
    let predicted = match params {
        Params::Ce2 { c } => Some(-c + 8.0 * c * c),
        _ => None,
    };
    let verdict = json!({
        "verdict": if report.confirmed { "non-optimality confirmed" } else { "not confirmed" },
        "predicted_t2_coefficient": predicted,
        "report": report,
    });
    write_json(&verdict, json, err)?;
    if report.confirmed {
        Ok(())
    } else {
        Err(Failure::NotConfirmed)
    }
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    objective: f64,
    active: usize,
    biactive: usize,
    kkt_residual: f64,
    stationarity: f64,
    status: String,
}

fn cmd_sweep(config: &Path, json: Option<&Path>, out: Out, err: Out) -> Result<(), Failure> {
    let cfg = Config::load(config)?;
    let sweep = cfg.sweep.clone().ok_or_else(|| Failure::Input("config has no \"sweep\" section".into()))?;
    // invalid values are input errors; everything downstream is reported per row
    let problems = sweep
        .values
        .iter()
        .map(|&v| cfg.build_with(Some((&sweep.name, v))).map(|p| (v, p)))
        .collect::<Result<Vec<_>, Error>>()?;
    let rows: Vec<SweepRow> = problems
        .into_par_iter()
        .map(|(value, p)| {
            let mut row = SweepRow {
                value,
                objective: f64::NAN,
                active: 0,
                biactive: 0,
                kkt_residual: f64::NAN,
                stationarity: f64::NAN,
                status: "ok".into(),
            };
            match assemble_bundle(&p.spec, &p.control, &p.psi, &p.bounds) {
                Ok(b) => {
                    row.objective = objective(&p.spec, b.y_bar(), &b.u_bar).unwrap_or(f64::NAN);
                    row.active = b.state.active_mask().iter().filter(|a| **a).count();
                    row.biactive = b.state.count(NodeClass::Biactive);
                    row.kkt_residual = b.state.kkt_residual;
                    row.stationarity = check_strong_stationarity(&b).max();
                }
                Err(e) => row.status = e.to_string(),
            }
            row
        })
        .collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([sweep.name.as_str(), "objective", "active", "biactive", "kkt_residual", "stationarity", "status"])?;
    for r in &rows {
        w.write_record([
            num(r.value),
            num(r.objective),
            r.active.to_string(),
            r.biactive.to_string(),
            num(r.kkt_residual),
            num(r.stationarity),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    write_json(&json!({"parameter": sweep.name, "rows": rows.len(), "failed": failed}), json, err)
}

fn init_threads() {
    if let Some(k) = std::env::var("OBSTACLE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second call in the same process finds the pool already built
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
    }
}

/// Run with explicit output streams; returns the exit code.
pub fn run_with<I, T>(argv: I, out: Out, err: Out) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_threads();
    let result = match cli.cmd {
        Cmd::Solve { config, json } => cmd_solve(&config, json.as_deref(), out, err),
        Cmd::Stationarity { config } => cmd_stationarity(&config, out),
        Cmd::Ssc { config, theorem } => cmd_ssc(&config, theorem, out),
        Cmd::Optimize { config, method, starts, json } => cmd_optimize(&config, method, starts, json.as_deref(), out, err),
        Cmd::Counterexample { id, param, gamma, n, tmin, tmax, tsteps, json } => {
            cmd_counterexample(id, param, gamma, n, tmin, tmax, tsteps, json.as_deref(), out, err)
        }
        Cmd::Sweep { config, json } => cmd_sweep(&config, json.as_deref(), out, err),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Input(m)) => {
            let _ = writeln!(err, "error: {m}");
            1
        }
        Err(Failure::Solver(m)) => {
            let _ = writeln!(err, "solver failure: {m}");
            2
        }
        Err(Failure::NotConfirmed) => 3,
    }
}

/// Run against the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
