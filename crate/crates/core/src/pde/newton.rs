use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::Mat;
use serde::Serialize;

use super::assembly::{evaluate, linearize, Evaluation, LinearizedOperator};
use super::spec::ProblemSpec;
use crate::error::Error;
use crate::geometry::ScalarField;

/// One accepted point on the continuation path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomotopyState {
    pub s: f64,
    #[serde(skip)]
    pub v: ScalarField,
    pub newton_iters: usize,
    pub residual_norm: f64,
    pub min_cone_margin: f64,
    /// Smallest `σ_1` of the homotopy argument.
    pub trace_min: f64,
    /// Sup-norm residual after each Newton iteration, starting value first.
    #[serde(skip)]
    pub history: Vec<f64>,
}

impl HomotopyState {
    fn from_eval(v: ScalarField, ev: &Evaluation, iters: usize, history: Vec<f64>) -> Self {
        Self {
            s: ev.s,
            v,
            newton_iters: iters,
            residual_norm: ev.sup_norm(),
            min_cone_margin: ev.min_margin(),
            trace_min: ev.min_trace(),
            history,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Spec(#[from] Error),
    #[error("Newton did not converge at s = {s} (best residual {residual:e})")]
    NonConvergence { s: f64, residual: f64, best: Box<HomotopyState> },
    #[error("the cone constraint could not be kept at s = {s} ({} nodes outside)", nodes.len())]
    Infeasible { s: f64, nodes: Vec<usize>, best: Option<Box<HomotopyState>> },
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("continuation stalled at s = {reached} (step {step:e} below the minimum): {cause}")]
    Continuation { reached: f64, step: f64, trace: Vec<HomotopyState>, cause: Box<SolveError> },
}

impl SolveError {
    /// The accepted states or best iterate carried by the error, for post-mortem output.
    pub fn trace(&self) -> Vec<HomotopyState> {
        match self {
            SolveError::NonConvergence { best, .. } => vec![(**best).clone()],
            SolveError::Infeasible { best: Some(b), .. } => vec![(**b).clone()],
            SolveError::Continuation { trace, .. } => trace.clone(),
            _ => vec![],
        }
    }
}

/// Sparse LU with the symbolic factorization reused across solves on one grid.
#[derive(Default)]
pub struct LinearSolver {
    symbolic: Option<SymbolicLu<usize>>,
    pub factorizations: usize,
}

impl LinearSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, op: &LinearizedOperator, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        let mat = op.to_sparse()?;
        if self.symbolic.is_none() {
            let sym = SymbolicLu::try_new(mat.symbolic()).map_err(|e| SolveError::LinearSolve(format!("{e:?}")))?;
            self.symbolic = Some(sym);
        }
        let sym = self.symbolic.clone().expect("symbolic factorization");
        let lu = Lu::try_new_with_symbolic(sym, mat.as_ref()).map_err(|e| SolveError::LinearSolve(format!("{e:?}")))?;
        self.factorizations += 1;
        let b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = lu.solve(&b);
        let out: Vec<f64> = (0..rhs.len()).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(SolveError::LinearSolve("singular Jacobian".into()));
        }
        Ok(out)
    }
}

fn axpy(v: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    v.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

/// Scales an infeasible start toward zero, where the argument is `-A^t_g`
/// blended with its trace and hence admissible.
fn predamp(spec: &ProblemSpec, v0: &ScalarField, s: f64) -> Result<(ScalarField, Evaluation), SolveError> {
    let mut ev = evaluate(spec, &v0.values, s);
    if ev.feasible() {
        return Ok((v0.clone(), ev));
    }
    let mut theta = 1.0;
    for _ in 0..40 {
        theta *= 0.5;
        let v = v0.map(|x| theta * x);
        ev = evaluate(spec, &v.values, s);
        if ev.feasible() {
            log::debug!("start damped by {theta} to enter the cone at s = {s}");
            return Ok((v, ev));
        }
    }
    Err(SolveError::Infeasible { s, nodes: ev.violations, best: None })
}

/// Damped Newton at fixed `s` with an Armijo test on the residual 2-norm and
/// a cone guard on every trial point.
pub(crate) fn newton(
    spec: &ProblemSpec,
    s: f64,
    v0: &ScalarField,
    tol: f64,
    lin: &mut LinearSolver,
) -> Result<HomotopyState, SolveError> {
    let policy = spec.policy();
    let (mut v, mut ev) = predamp(spec, v0, s)?;
    let mut history = vec![ev.sup_norm()];
    let mut iters = 0;
    loop {
        if ev.sup_norm() <= tol {
            return Ok(HomotopyState::from_eval(v, &ev, iters, history));
        }
        if iters >= policy.max_newton {
            let residual = ev.sup_norm();
            return Err(SolveError::NonConvergence {
                s,
                residual,
                best: Box::new(HomotopyState::from_eval(v, &ev, iters, history)),
            });
        }
        let op = linearize(&v, s, spec)?;
        let rhs: Vec<f64> = ev.residual.iter().map(|x| -x).collect();
        let delta = lin.solve(&op, &rhs)?;
        let merit = ev.l2_norm();
        let mut alpha = 1.0;
        let mut accepted = None;
        let mut last_violations = vec![];
        for _ in 0..=policy.max_halvings {
            let trial = axpy(&v.values, alpha, &delta);
            let tev = evaluate(spec, &trial, s);
            if tev.feasible() && tev.l2_norm() <= (1.0 - policy.armijo * alpha) * merit {
                accepted = Some((ScalarField::new(trial), tev));
                break;
            }
            if !tev.feasible() {
                last_violations = tev.violations;
            }
            alpha *= 0.5;
        }
        iters += 1;
        match accepted {
            Some((nv, nev)) => {
                v = nv;
                ev = nev;
                history.push(ev.sup_norm());
                log::trace!("s = {s}: iteration {iters}, step {alpha}, residual {:e}", ev.sup_norm());
            }
            None => {
                let best = Box::new(HomotopyState::from_eval(v, &ev, iters, history));
                if !last_violations.is_empty() {
                    return Err(SolveError::Infeasible { s, nodes: last_violations, best: Some(best) });
                }
                return Err(SolveError::NonConvergence { s, residual: best.residual_norm, best });
            }
        }
    }
}

/// Newton solve of the homotopy equation at `s` to the policy's Newton tolerance.
pub fn newton_solve(spec: &ProblemSpec, s: f64, v0: &ScalarField) -> Result<HomotopyState, SolveError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Parameter(format!("homotopy parameter s = {s} outside [0, 1]")).into());
    }
    if v0.len() != spec.grid().len() || !v0.all_finite() {
        return Err(Error::Shape("initial guess must be finite with one value per node".into()).into());
    }
    newton(spec, s, v0, spec.policy().tol_newton, &mut LinearSolver::new())
}

/// Pseudo-transient continuation `(J - D/τ) δ = -r` with `D` the identity on
/// interior rows, `τ` grown by the ratio of successive residuals. Used when
/// Newton fails from a poor start.
pub(crate) fn pseudo_transient(
    spec: &ProblemSpec,
    s: f64,
    v0: &ScalarField,
    tol: f64,
    lin: &mut LinearSolver,
) -> Result<HomotopyState, SolveError> {
    let policy = spec.policy();
    let grid = spec.grid();
    let (mut v, mut ev) = predamp(spec, v0, s)?;
    let mut history = vec![ev.sup_norm()];
    let mut tau = 0.05;
    for step in 0..policy.ptc_max_steps {
        let r = ev.l2_norm();
        if ev.sup_norm() <= tol {
            return Ok(HomotopyState::from_eval(v, &ev, step, history));
        }
        let mut op = linearize(&v, s, spec)?;
        op.shift_diagonal(-1.0 / tau, |p| grid.sheet_of(p).is_none());
        let rhs: Vec<f64> = ev.residual.iter().map(|x| -x).collect();
        let delta = lin.solve(&op, &rhs)?;
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..=policy.max_halvings {
            let trial = axpy(&v.values, alpha, &delta);
            let tev = evaluate(spec, &trial, s);
            if tev.feasible() && tev.sup_norm().is_finite() {
                v = ScalarField::new(trial);
                ev = tev;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            return Err(SolveError::Infeasible {
                s,
                nodes: vec![],
                best: Some(Box::new(HomotopyState::from_eval(v, &ev, step, history))),
            });
        }
        history.push(ev.sup_norm());
        let ratio = r / ev.l2_norm();
        tau = (tau * ratio.clamp(0.1, 10.0) * alpha.max(0.25)).clamp(1e-6, 1e12);
    }
    let residual = ev.sup_norm();
    Err(SolveError::NonConvergence {
        s,
        residual,
        best: Box::new(HomotopyState::from_eval(v, &ev, policy.ptc_max_steps, history)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{boundary_mean_curvature, BoundaryField, MetricField};
    use crate::grid::GridManifold;
    use crate::pde::linearize;
    use crate::pde::testing::consistent;
    use crate::symfunc::ConePair;

    #[test]
    fn recovers_manufactured_solution_from_shifted_start() {
        for (k, t) in [(1, 0.0), (2, 0.0), (2, 0.5)] {
            let (spec, vs) = consistent(8, k, t);
            let state = newton_solve(&spec, 1.0, &vs.map(|x| x + 0.1)).unwrap();
            assert!(state.newton_iters <= 8, "k={k} t={t}: {} iterations", state.newton_iters);
            assert!(state.v.sup_diff(&vs) <= 1e-8, "k={k} t={t}: {}", state.v.sup_diff(&vs));
            assert!(state.residual_norm <= 1e-10);
            assert!(state.min_cone_margin > 0.0);
            // quadratic tail; residuals are second differences, so their
            // second derivative in v scales like 1/h⁴
            let scale = spec.grid().h().powi(-4);
            let r = &state.history;
            let n = r.len();
            assert!(n >= 3);
            for j in [n - 2, n - 1] {
                assert!(r[j] <= 0.5 * r[j - 1] * r[j - 1] * scale, "{r:?}");
            }
        }
    }

    #[test]
    fn exact_start_needs_at_most_one_iteration() {
        let (spec, vs) = consistent(8, 1, 0.0);
        let state = newton_solve(&spec, 1.0, &vs).unwrap();
        assert!(state.newton_iters <= 1);
        assert!(state.residual_norm <= 1e-10);
    }

    /// With `ψ > 0` on the lower sheet the linearization at `v = ½ln6` has the
    /// exact null vector `1/(1+y_n)`: the O(h²) consistency error is amplified
    /// along it instead of giving O(h²) recovery.
    #[test]
    fn constant_solution_drifts_along_the_null_vector() {
        let c = 0.5 * 6f64.ln();
        let grid = GridManifold::uniform(3, 16).unwrap();
        let g = MetricField::hyperbolic_slab(&grid);
        let phi = ScalarField::constant(&grid, 1.0);
        let h = boundary_mean_curvature(&g, &grid).unwrap();
        let psi =
            h.map(|b| BoundaryField { sheet: b.sheet, values: b.values.iter().map(|x| x * (-c).exp()).collect() });
        let spec = ProblemSpec::new(grid.clone(), g, ConePair::new(1, 3).unwrap(), 0.0, phi, psi).unwrap();
        let state = newton_solve(&spec, 1.0, &ScalarField::zeros(&grid)).unwrap();
        let err = state.v.map(|x| x - c);
        let null = ScalarField::from_fn(&grid, |y| 1.0 / (1.0 + y[2]));
        let amp = err.values[0] / null.values[0];
        assert!(amp.abs() > 1e-2);
        let off = err.zip_with(&null, |e, w| e - amp * w).sup_norm();
        assert!(off < 0.1 * amp.abs(), "{off} vs {amp}");
        let op = linearize(&ScalarField::constant(&grid, c), 1.0, &spec).unwrap();
        let image = op.apply(&null.values);
        let scale = op.apply(&vec![1.0; grid.len()]).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let defect = image.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(defect < 0.1 * scale, "{defect} vs {scale}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (spec, vs) = consistent(8, 1, 0.0);
        assert!(newton_solve(&spec, 1.5, &vs).is_err());
        assert!(newton_solve(&spec, 1.0, &ScalarField::new(vec![0.0; 3])).is_err());
    }

    #[test]
    fn iteration_cap_reports_best_state() {
        let (spec, vs) = consistent(8, 2, 0.0);
        let mut policy = spec.policy().clone();
        policy.max_newton = 1;
        let spec = spec.with_policy(policy).unwrap();
        match newton_solve(&spec, 1.0, &vs.map(|x| x + 0.3)) {
            Err(err @ SolveError::NonConvergence { .. }) => assert_eq!(err.trace().len(), 1),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
