//! `solve` and `verify` drivers: artifacts on disk plus a process exit code.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use yamabe_core::estimates::{c0_bound_window, estimate_monitor_with, BoundsReport, C0Window};
use yamabe_core::geometry::io::{scalar_to_csv, FieldHeader, FieldKind};
use yamabe_core::pde::{continue_homotopy, evaluate, newton_solve, write_trace_jsonl, HomotopyState, SolveError};

use crate::config::{self, Format, Method, Problem, RunConfig};
use crate::suites::{run_suite, Suite, SuiteError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNMET: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Output(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Read { .. } => EXIT_CONFIG,
            RunError::Write { .. } | RunError::Output(_) => EXIT_SOLVER,
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<(RunConfig, PathBuf), RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::Read { path: path.into(), source })?;
    let mut cfg = config::parse(&text)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    let out = overrides.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.outputs.directory));
    Ok((cfg, out))
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub status: &'static str,
    pub exit_code: i32,
    pub method: Method,
    pub k: usize,
    pub t: f64,
    pub shape: Vec<usize>,
    pub seed: u64,
    pub converged: bool,
    pub residual_norm: Option<f64>,
    pub tolerance: f64,
    pub min_cone_margin: Option<f64>,
    pub trace_min: Option<f64>,
    pub accepted_states: usize,
    pub newton_iters: usize,
    pub within_window: Option<bool>,
    pub exact_error: Option<f64>,
    pub error: Option<String>,
    pub timing: Timing,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Timing {
    pub solve_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
struct BoundsFile {
    window: C0Window,
    monitors: BoundsReport,
}

/// Result of a solve: the summary that went to disk and where.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub summary: SolveSummary,
    pub out: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path).map(BufWriter::new).map_err(|source| RunError::Write { path: path.into(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| RunError::Output(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|source| RunError::Write { path: path.into(), source })
}

fn solve(
    problem: &Problem,
    method: Method,
) -> Result<(yamabe_core::geometry::ScalarField, Vec<HomotopyState>), SolveError> {
    match method {
        Method::Continuation => continue_homotopy(&problem.spec, &problem.initial),
        Method::Newton => newton_solve(&problem.spec, 1.0, &problem.initial).map(|s| (s.v.clone(), vec![s])),
    }
}

/// Builds and solves the configured problem, writing `solution.csv`,
/// `trace.jsonl`, `bounds.json` and `summary.json` into `out`.
pub fn run_solve(cfg: &RunConfig, out: &Path) -> Result<SolveOutcome, RunError> {
    let start = Instant::now();
    let problem = cfg.build()?;
    fs::create_dir_all(out).map_err(|source| RunError::Write { path: out.into(), source })?;

    let solve_start = Instant::now();
    let result = solve(&problem, cfg.solver.method);
    let solve_seconds = solve_start.elapsed().as_secs_f64();

    let spec = &problem.spec;
    let grid = spec.grid();
    let tolerance = spec.policy().tol_newton;
    let mut summary = SolveSummary {
        status: "failed",
        exit_code: EXIT_SOLVER,
        method: cfg.solver.method,
        k: cfg.problem.k,
        t: cfg.problem.t,
        shape: grid.shape().to_vec(),
        seed: cfg.seed,
        converged: false,
        residual_norm: None,
        tolerance,
        min_cone_margin: None,
        trace_min: None,
        accepted_states: 0,
        newton_iters: 0,
        within_window: None,
        exact_error: None,
        error: None,
        timing: Timing { solve_seconds, total_seconds: 0.0 },
    };

    let trace = match &result {
        Ok((_, trace)) => trace.clone(),
        Err(e) => e.trace(),
    };
    write_trace_jsonl(create(&out.join("trace.jsonl"))?, &trace).map_err(|e| RunError::Output(e.to_string()))?;
    summary.accepted_states = trace.len();
    summary.newton_iters = trace.iter().map(|s| s.newton_iters).sum();

    match result {
        Ok((v, _)) => {
            let ev = evaluate(spec, &v.values, 1.0);
            let residual = ev.sup_norm();
            summary.converged = true;
            summary.residual_norm = Some(residual);
            summary.min_cone_margin = Some(ev.min_margin());
            summary.trace_min = Some(ev.min_trace());
            summary.exact_error = problem.exact.as_ref().map(|e| v.sup_diff(e));

            if cfg.outputs.formats.contains(&Format::Csv) {
                let mut w = create(&out.join("solution.csv"))?;
                scalar_to_csv(&mut w, grid, &v, Some(cfg.problem.t)).map_err(|e| RunError::Output(e.to_string()))?;
                w.flush().map_err(|source| RunError::Write { path: out.join("solution.csv"), source })?;
            }
            if cfg.outputs.formats.contains(&Format::Json) {
                let header = FieldHeader::for_grid(grid, FieldKind::Scalar, Some(cfg.problem.t));
                let path = out.join("solution.header.json");
                fs::write(&path, header.to_json() + "\n").map_err(|source| RunError::Write { path, source })?;
            }

            match c0_bound_window(spec).and_then(|w| Ok((w, estimate_monitor_with(&v, spec, &w)?))) {
                Ok((window, monitors)) => {
                    summary.within_window = Some(monitors.within_window);
                    write_json(&out.join("bounds.json"), &BoundsFile { window, monitors })?;
                }
                Err(e) => {
                    summary.within_window = Some(false);
                    summary.error = Some(format!("bounds unavailable: {e}"));
                }
            }
            let ok = residual <= tolerance && summary.within_window == Some(true);
            summary.status = if ok { "solved" } else { "unmet" };
            summary.exit_code = if ok { EXIT_OK } else { EXIT_UNMET };
        }
        Err(e) => {
            summary.error = Some(e.to_string());
            if let Some(best) = trace.last() {
                summary.residual_norm = Some(best.residual_norm);
                summary.min_cone_margin = Some(best.min_cone_margin);
                summary.trace_min = Some(best.trace_min);
            }
        }
    }
    summary.timing.total_seconds = start.elapsed().as_secs_f64();
    write_json(&out.join("summary.json"), &summary)?;
    Ok(SolveOutcome { summary, out: out.into() })
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub exit_code: i32,
    pub reports: Vec<crate::suites::SuiteReport>,
}

/// Runs the named suite, or every suite for `"all"`, and writes `verify.json`.
pub fn run_verify(cfg: &RunConfig, suite: &str, levels: usize, out: &Path) -> Result<VerifyOutcome, RunError> {
    let suites: Vec<Suite> =
        if suite == "all" { Suite::ALL.to_vec() } else { vec![suite.parse().map_err(config::ConfigError::Invalid)?] };
    let mut reports = vec![];
    for s in suites {
        match run_suite(cfg, s, levels) {
            Ok(r) => reports.push(r),
            Err(SuiteError::Config(e)) => return Err(e.into()),
            Err(SuiteError::Failed(msg)) => reports.push(crate::suites::SuiteReport {
                suite: s,
                passed: false,
                checks: vec![],
                details: serde_json::json!({ "error": msg }),
                seconds: 0.0,
            }),
        }
    }
    let exit_code = if reports.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_UNMET };
    let outcome = VerifyOutcome { exit_code, reports };
    fs::create_dir_all(out).map_err(|source| RunError::Write { path: out.into(), source })?;
    write_json(&out.join("verify.json"), &outcome)?;
    Ok(outcome)
}
