use std::io::Write;

use serde::{Deserialize, Serialize};

use super::newton::{newton, pseudo_transient, HomotopyState, LinearSolver, SolveError};
use super::spec::ProblemSpec;
use crate::error::{Error, Result};
use crate::geometry::ScalarField;

fn tolerance(spec: &ProblemSpec, s: f64) -> f64 {
    if s >= 1.0 {
        spec.policy().tol_newton
    } else {
        spec.policy().tol_path
    }
}

/// Solves the `s = 0` problem, then marches the schedule to `s = 1`, bisecting
/// rejected steps down to the policy's minimum step.
pub fn continue_homotopy(
    spec: &ProblemSpec,
    v_init: &ScalarField,
) -> std::result::Result<(ScalarField, Vec<HomotopyState>), SolveError> {
    continue_homotopy_with(spec, v_init, &mut LinearSolver::new())
}

pub fn continue_homotopy_with(
    spec: &ProblemSpec,
    v_init: &ScalarField,
    lin: &mut LinearSolver,
) -> std::result::Result<(ScalarField, Vec<HomotopyState>), SolveError> {
    if v_init.len() != spec.grid().len() || !v_init.all_finite() {
        return Err(Error::Shape("initial guess must be finite with one value per node".into()).into());
    }
    let policy = spec.policy();
    policy.validate()?;
    let schedule = &policy.homotopy_schedule;
    let start = match newton(spec, 0.0, v_init, tolerance(spec, 0.0), lin) {
        Ok(state) => state,
        Err(err) => {
            log::info!("Newton failed at s = 0 ({err}); falling back to pseudo-transient continuation");
            let ptc = pseudo_transient(spec, 0.0, v_init, tolerance(spec, 0.0), lin)?;
            newton(spec, 0.0, &ptc.v, tolerance(spec, 0.0), lin)?
        }
    };
    let mut trace = vec![start];
    let mut pending: Vec<f64> = schedule[1..].iter().rev().cloned().collect();
    while let Some(target) = pending.pop() {
        let current = trace.last().expect("non-empty trace");
        match newton(spec, target, &current.v, tolerance(spec, target), lin) {
            Ok(state) => {
                log::debug!(
                    "s = {target}: {} iterations, residual {:e}, margin {:e}",
                    state.newton_iters,
                    state.residual_norm,
                    state.min_cone_margin
                );
                trace.push(state);
            }
            Err(err) => {
                let step = target - current.s;
                if step / 2.0 < policy.min_step {
                    let reached = current.s;
                    return Err(SolveError::Continuation { reached, step, trace, cause: Box::new(err) });
                }
                log::debug!("step to s = {target} rejected ({err}); bisecting");
                pending.push(target);
                pending.push(current.s + step / 2.0);
            }
        }
    }
    let last = trace.last().expect("non-empty trace");
    Ok((last.v.clone(), trace))
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub s: f64,
    pub residual_norm: f64,
    pub newton_iters: usize,
    pub min_cone_margin: f64,
}

impl From<&HomotopyState> for TraceRecord {
    fn from(state: &HomotopyState) -> Self {
        Self {
            s: state.s,
            residual_norm: state.residual_norm,
            newton_iters: state.newton_iters,
            min_cone_margin: state.min_cone_margin,
        }
    }
}

pub fn write_trace_jsonl<W: Write>(mut out: W, trace: &[HomotopyState]) -> Result<()> {
    for state in trace {
        let line = serde_json::to_string(&TraceRecord::from(state)).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::Parse(e.to_string()))?;
    }
    Ok(())
}

/// Parses `trace.jsonl`; blank lines are skipped, `s` must lie in `[0, 1]`
/// and be non-decreasing.
pub fn parse_trace_jsonl(text: &str) -> Result<Vec<TraceRecord>> {
    let mut out: Vec<TraceRecord> = vec![];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse(format!("trace line {}: {e}", i + 1)))?;
        if !(0.0..=1.0).contains(&rec.s) {
            return Err(Error::Parse(format!("trace line {}: s = {} outside [0, 1]", i + 1, rec.s)));
        }
        if !(rec.residual_norm >= 0.0) {
            return Err(Error::Parse(format!("trace line {}: negative or NaN residual", i + 1)));
        }
        if let Some(prev) = out.last() {
            if rec.s < prev.s {
                return Err(Error::Parse(format!("trace line {}: s decreases", i + 1)));
            }
        }
        out.push(rec);
    }
    Ok(out)
}
