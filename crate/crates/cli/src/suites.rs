//! Property suites behind `yamabe verify`.

use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use yamabe_core::conformal::{pushforward_mean_curvature, pushforward_schouten};
use yamabe_core::estimates::{refinement_study, uniqueness_probe, RefinementTable};
use yamabe_core::fermi::chart::{CONTAINMENT_SAMPLES, MAX_RADIUS};
use yamabe_core::fermi::{build_chart, validate_chart_with, ChartReport};
use yamabe_core::geometry::{boundary_mean_curvature, rel_eigenvalues, CurvatureBundle};
use yamabe_core::grid::Sheet;
use yamabe_core::symfunc::{check_hypotheses, ConePair, HypothesisReport};

use crate::config::{smooth_noise, BackgroundConfig, ConfigError, RunConfig};

pub const HYPOTHESIS_SAMPLES: usize = 200;
pub const ORDER_RANGE: (f64, f64) = (1.7, 2.3);
pub const UNIQUENESS_GAP: f64 = 1e-8;
pub const MONITOR_DRIFT: f64 = 0.05;
pub const TWO_PATH_FIELDS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Hypotheses,
    Conformal,
    Fermi,
    Uniqueness,
    Refinement,
}

impl Suite {
    pub const ALL: [Suite; 5] =
        [Suite::Hypotheses, Suite::Conformal, Suite::Fermi, Suite::Uniqueness, Suite::Refinement];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Hypotheses => "hypotheses",
            Suite::Conformal => "conformal",
            Suite::Fermi => "fermi",
            Suite::Uniqueness => "uniqueness",
            Suite::Refinement => "refinement",
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<_> = Suite::ALL.iter().map(|x| x.name()).collect();
            format!("unknown suite '{s}' (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value ≤ limit`.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, passed: value <= limit }
    }

    pub fn within(name: impl Into<String>, value: f64, range: (f64, f64)) -> Self {
        let passed = (range.0..=range.1).contains(&value);
        Self { name: name.into(), value, limit: range.1, passed }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), value: if ok { 1.0 } else { 0.0 }, limit: 1.0, passed: ok }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: serde_json::Value,
    pub seconds: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("suite could not run: {0}")]
    Failed(String),
}

impl From<yamabe_core::Error> for SuiteError {
    fn from(e: yamabe_core::Error) -> Self {
        SuiteError::Failed(e.to_string())
    }
}

fn json<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).unwrap_or(serde_json::Value::Null)
}

pub fn run_suite(cfg: &RunConfig, suite: Suite, levels: usize) -> Result<SuiteReport, SuiteError> {
    let start = Instant::now();
    let (checks, details) = match suite {
        Suite::Hypotheses => hypotheses(cfg)?,
        Suite::Conformal => conformal(cfg)?,
        Suite::Fermi => fermi(cfg)?,
        Suite::Uniqueness => uniqueness(cfg)?,
        Suite::Refinement => refinement(cfg, levels)?,
    };
    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport { suite, passed, checks, details, seconds: start.elapsed().as_secs_f64() })
}

fn hypotheses(cfg: &RunConfig) -> Result<(Vec<Check>, serde_json::Value), SuiteError> {
    let n = cfg.manifold.n;
    let mut checks = vec![];
    let mut reports: Vec<HypothesisReport> = vec![];
    for k in 1..=n.min(3) {
        let report = check_hypotheses(&ConePair::new(k, n)?, HYPOTHESIS_SAMPLES, cfg.seed)?;
        checks.push(Check::at_most(format!("k={k} violations"), report.violations.total() as f64, 0.0));
        reports.push(report);
    }
    Ok((checks, json(&reports)))
}

fn require_resolution_free(cfg: &RunConfig, suite: &str) -> Result<(), SuiteError> {
    if cfg.is_resolution_free() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("the {suite} suite needs a background and data defined at every resolution"))
            .into())
    }
}

/// Sup errors of pushforward against direct curvature (eigenvalues, mean
/// curvature) at `cells` and `2·cells` for one smooth field.
pub fn two_path_errors(cfg: &RunConfig, cells: usize, seed: u64) -> Result<([f64; 2], [f64; 2]), SuiteError> {
    let t = cfg.problem.t;
    let mut eig = [0.0; 2];
    let mut mean = [0.0; 2];
    for (i, m) in [cells, 2 * cells].into_iter().enumerate() {
        let grid = cfg.grid_with(m)?;
        let g = cfg.metric(&grid)?;
        let v = smooth_noise(&grid, 0.2, seed);
        let (_, push) = pushforward_schouten(&v, &g, &grid, t)?;
        let gt = g.conformal(&grid, &v)?;
        let b = CurvatureBundle::compute(&gt, &grid, t)?;
        let direct = rel_eigenvalues(&b.schouten_t, &gt)?;
        eig[i] = push.sup_diff(&direct);
        let hp = pushforward_mean_curvature(&v, &g, &grid)?;
        let hd = boundary_mean_curvature(&gt, &grid)?;
        mean[i] = hp.lower.sup_diff(&hd.lower).max(hp.upper.sup_diff(&hd.upper));
    }
    Ok((eig, mean))
}

fn conformal(cfg: &RunConfig) -> Result<(Vec<Check>, serde_json::Value), SuiteError> {
    require_resolution_free(cfg, "conformal")?;
    let mut checks = vec![];
    let mut rows = vec![];
    for i in 0..TWO_PATH_FIELDS {
        let seed = cfg.seed.wrapping_add(i);
        let (eig, mean) = two_path_errors(cfg, cfg.manifold.cells, seed)?;
        let (oe, om) = ((eig[0] / eig[1]).log2(), (mean[0] / mean[1]).log2());
        checks.push(Check::within(format!("field {i} eigenvalue order"), oe, ORDER_RANGE));
        checks.push(Check::within(format!("field {i} mean-curvature order"), om, ORDER_RANGE));
        rows.push(serde_json::json!({ "seed": seed, "eigenvalue_errors": eig, "mean_curvature_errors": mean }));
    }
    Ok((checks, serde_json::Value::Array(rows)))
}

/// Chart reports at a base point on each sheet.
pub fn fermi_reports(cfg: &RunConfig, containment: usize) -> Result<Vec<ChartReport>, SuiteError> {
    let grid = cfg.grid()?;
    let g = cfg.metric(&grid)?;
    let n = grid.n();
    Sheet::BOTH
        .into_iter()
        .map(|sheet| {
            let mut base = vec![0.5; n];
            base[0] = 0.3;
            base[n - 1] = if sheet == Sheet::Lower { 0.0 } else { 1.0 };
            let chart = build_chart(&grid, &g, &base, MAX_RADIUS)?;
            Ok(validate_chart_with(&chart, &grid, &g, containment, cfg.seed)?)
        })
        .collect()
}

fn fermi(cfg: &RunConfig) -> Result<(Vec<Check>, serde_json::Value), SuiteError> {
    let reports = fermi_reports(cfg, CONTAINMENT_SAMPLES)?;
    let h = cfg.grid()?.h();
    let limit = if matches!(cfg.background, BackgroundConfig::Flat) { 1e-10 } else { h * h };
    let mut checks = vec![];
    for (sheet, r) in ["lower", "upper"].iter().zip(&reports) {
        checks.push(Check::at_most(format!("{sheet} orthogonality defect"), r.orthogonality_defect, limit));
        checks.push(Check::at_most(format!("{sheet} normal deviation"), r.normal_deviation, limit));
        checks.push(Check::at_most(format!("{sheet} base metric defect"), r.base_metric_defect, 1e-8));
        checks.push(Check::at_most(format!("{sheet} distance defect"), r.distance_defect, 1e-6));
        checks.push(Check::at_most(format!("{sheet} containment violations"), r.containment_violations as f64, 0.0));
        checks.push(Check::flag(format!("{sheet} distinct foot points"), r.min_foot_separation > 0.0));
    }
    Ok((checks, json(&reports)))
}

fn uniqueness(cfg: &RunConfig) -> Result<(Vec<Check>, serde_json::Value), SuiteError> {
    let problem = cfg.build()?;
    let seeds = cfg.seed_fields(problem.spec.grid())?;
    let gap = uniqueness_probe(&problem.spec, &seeds).map_err(|e| SuiteError::Failed(e.to_string()))?;
    let checks = vec![Check::at_most("max pairwise sup gap", gap, UNIQUENESS_GAP)];
    Ok((checks, serde_json::json!({ "seeds": seeds.len(), "gap": gap })))
}

pub fn refinement_table(cfg: &RunConfig, levels: usize) -> Result<RefinementTable, SuiteError> {
    require_resolution_free(cfg, "refinement")?;
    Ok(refinement_study(
        |grid| {
            let p = cfg.build_at(grid).map_err(|e| yamabe_core::Error::Parameter(e.to_string()))?;
            Ok((p.spec, p.exact))
        },
        cfg.manifold.n,
        cfg.manifold.cells,
        levels,
    )?)
}

fn refinement(cfg: &RunConfig, levels: usize) -> Result<(Vec<Check>, serde_json::Value), SuiteError> {
    if levels < 2 {
        return Err(ConfigError::Invalid("the refinement suite needs at least 2 levels".into()).into());
    }
    let table = refinement_table(cfg, levels)?;
    let mut checks = vec![Check::flag(
        "every level solved",
        table.levels.len() == levels && table.levels.iter().all(|l| l.failure.is_none()),
    )];
    for (i, l) in table.levels.iter().enumerate() {
        if let Some(m) = &l.monitors {
            checks.push(Check::flag(format!("level {i} within window"), m.within_window));
        }
    }
    for (i, o) in table.orders.iter().enumerate() {
        checks.push(Check::within(format!("order {i}->{}", i + 1), *o, ORDER_RANGE));
    }
    if let Some(last) = table.monitor_ratios.last() {
        checks.push(Check::at_most("finest monitor drift", last.max_deviation(), MONITOR_DRIFT));
    }
    Ok((checks, json(&table)))
}
