//! Computable counterparts of the a-priori theory: C⁰ windows from the
//! constructive maximum-principle arguments, uniqueness probes, derivative
//! monitors and refinement studies.

use serde::Serialize;

use crate::conformal::{distance_surrogate, gradient_hessian_at, zero_mean_curvature_gauge};
use crate::error::{Error, Result};
use crate::geometry::boundary::outward_normal;
use crate::geometry::{dense, CurvatureBundle, MetricField, ScalarField};
use crate::grid::GridManifold;
use crate::pde::{continue_homotopy, evaluate, newton_solve, ProblemSpec, SolveError};
use crate::symfunc::AdmissibleFunction;

/// Slack absorbing O(h²) discretization error in window comparisons.
pub const WINDOW_SLACK: f64 = 0.05;
/// Largest gauge constant tried for the lower bound.
pub const EPSILON0_MAX: f64 = 0.5;

/// `f(-λ_g(A^t_g))` at every node, `None` where the argument is outside the cone.
pub fn background_curvature_values(
    grid: &GridManifold,
    g: &MetricField,
    cone: &dyn AdmissibleFunction,
    t: f64,
) -> Result<Vec<Option<f64>>> {
    let bundle = CurvatureBundle::compute(g, grid, t)?;
    let n = grid.n();
    let mut neg = vec![0.0; n * n];
    (0..grid.len())
        .map(|p| {
            for (x, a) in neg.iter_mut().zip(bundle.schouten_t.node(p)) {
                *x = -a;
            }
            let lam = dense::rel_eigenvalues(n, &neg, g.node(p)).ok_or(Error::Definiteness { node: p })?;
            Ok(cone.value(&lam).ok())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct C0Window {
    pub lower: f64,
    pub upper: f64,
    /// Gauge constant of the lower-bound metric `e^{2ε₀w}g`.
    pub epsilon0: f64,
    /// `max v₀` of the zero-mean-curvature gauge used for the upper bound.
    pub upper_shift: f64,
    /// Both maximum-principle arguments apply: `ψ ≤ 0` and `h_g ≤ 0`.
    pub rigorous: bool,
    /// Whether the boundary branch `ln(ε₀/sup|ψ|) - ε₀` entered the lower bound.
    pub boundary_branch: bool,
}

impl C0Window {
    pub fn contains(&self, v: &ScalarField, slack: f64) -> bool {
        self.lower - slack <= v.min() && v.max() <= self.upper + slack
    }
}

/// Largest `ε₀ ≤ 1/2` (by bisection) keeping `-λ(A^t)` of `e^{2ε₀w}g` in the
/// cone with `f ≥ ½ min f(-λ(A^t_g))` at every node.
pub fn choose_epsilon0(spec: &ProblemSpec) -> Result<f64> {
    let grid = spec.grid();
    let g = spec.metric();
    let target = 0.5 * spec.background_values().min();
    let w = distance_surrogate(g, grid)?;
    let ok = |eps: f64| -> Result<bool> {
        let g0 = g.conformal(grid, &w.map(|x| eps * x))?;
        let vals = background_curvature_values(grid, &g0, spec.cone(), spec.t())?;
        Ok(vals.iter().all(|f| matches!(f, Some(x) if *x >= target)))
    };
    if ok(EPSILON0_MAX)? {
        return Ok(EPSILON0_MAX);
    }
    let (mut lo, mut hi) = (0.0, EPSILON0_MAX);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// C⁰ window for solutions of `spec`.
///
/// Upper: `max v₀ + ½ln(sup f(-λ(A^t_{g₀})) / inf φ)` with `g₀ = e^{2v₀}g` the
/// zero-mean-curvature gauge, the supremum over nodes where `g₀` is admissible.
/// Lower: `ε₀ min w + min(½ln(½ min f(-λ(A^t_{g₀})) / sup φ), ln(ε₀/sup|ψ|) - ε₀)`
/// with `g₀ = e^{2ε₀w}g`; the boundary branch is dropped when `ψ ≡ 0`.
pub fn c0_bound_window(spec: &ProblemSpec) -> Result<C0Window> {
    let grid = spec.grid();
    let g = spec.metric();
    let phi = spec.phi();
    if !(phi.min() > 0.0) {
        return Err(Error::Domain("inf phi must be positive".into()));
    }

    let (g_up, v0) = zero_mean_curvature_gauge(g, grid)?;
    let sup_f = background_curvature_values(grid, &g_up, spec.cone(), spec.t())?
        .into_iter()
        .flatten()
        .fold(f64::NEG_INFINITY, f64::max);
    let upper_shift = v0.max();
    let upper = if sup_f.is_finite() { upper_shift + 0.5 * (sup_f / phi.min()).ln() } else { f64::INFINITY };

    let eps0 = choose_epsilon0(spec)?;
    let w = distance_surrogate(g, grid)?;
    let g_low = g.conformal(grid, &w.map(|x| eps0 * x))?;
    let min_f = background_curvature_values(grid, &g_low, spec.cone(), spec.t())?
        .into_iter()
        .map(|f| f.unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min);
    let mut lower = 0.5 * (0.5 * min_f / phi.max()).ln();
    let sup_psi = spec.psi().lower.sup_norm().max(spec.psi().upper.sup_norm());
    let boundary_branch = sup_psi > 0.0;
    if boundary_branch {
        lower = lower.min((eps0 / sup_psi).ln() - eps0);
    }
    lower += eps0 * w.min();

    let flags = spec.flags();
    Ok(C0Window {
        lower,
        upper,
        epsilon0: eps0,
        upper_shift,
        rigorous: flags.psi_nonpositive && flags.mean_curvature_nonpositive,
        boundary_branch,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("a uniqueness probe needs at least two seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("probe inconclusive: run from seed {seed} failed: {source}")]
    Inconclusive { seed: usize, source: SolveError },
}

/// Runs the continuation from every seed (in parallel) and returns the
/// largest pairwise sup-norm gap between the solutions.
pub fn uniqueness_probe(spec: &ProblemSpec, seeds: &[ScalarField]) -> std::result::Result<f64, ProbeError> {
    if seeds.len() < 2 {
        return Err(ProbeError::TooFewSeeds(seeds.len()));
    }
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds.iter().map(|seed| scope.spawn(move || continue_homotopy(spec, seed))).collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });
    let mut solutions = Vec::with_capacity(results.len());
    for (seed, r) in results.into_iter().enumerate() {
        match r {
            Ok((v, _)) => solutions.push(v),
            Err(source) => return Err(ProbeError::Inconclusive { seed, source }),
        }
    }
    let mut gap: f64 = 0.0;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            gap = gap.max(solutions[i].sup_diff(&solutions[j]));
        }
    }
    Ok(gap)
}

/// Derivative monitors and the C⁰ window check for one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    pub c0_upper: f64,
    pub c0_lower: f64,
    pub min_v: f64,
    pub max_v: f64,
    /// `sup |∇v|_g`.
    pub sup_grad: f64,
    /// `sup |∇²v|_g`.
    pub sup_hess: f64,
    /// `sup |∇²v(ν, ν)|` over the boundary sheets.
    pub sup_vnn_boundary: f64,
    /// `min σ₁(λ_g(W_g^v - A^t_g))`.
    pub trace_min: f64,
    pub within_window: bool,
    pub rigorous: bool,
    pub all_finite: bool,
}

pub fn estimate_monitor(v: &ScalarField, spec: &ProblemSpec) -> Result<BoundsReport> {
    let window = c0_bound_window(spec)?;
    estimate_monitor_with(v, spec, &window)
}

pub fn estimate_monitor_with(v: &ScalarField, spec: &ProblemSpec, window: &C0Window) -> Result<BoundsReport> {
    let grid = spec.grid();
    if v.len() != grid.len() {
        return Err(Error::Shape(format!("field has {} values, grid has {} nodes", v.len(), grid.len())));
    }
    let n = grid.n();
    let bg = spec.background();
    let (mut sup_grad, mut sup_hess, mut sup_vnn) = (0.0f64, 0.0f64, 0.0f64);
    for p in 0..grid.len() {
        let ginv = bg.ginv.node(p);
        let (dv, hess) = gradient_hessian_at(grid, &v.values, bg.curvature.christoffel.node(p), p);
        let mut grad2 = 0.0;
        for a in 0..n {
            for b in 0..n {
                grad2 += ginv[a * n + b] * dv[a] * dv[b];
            }
        }
        // |H|² = tr(G⁻¹ H G⁻¹ H)
        let mut hh = 0.0;
        for a in 0..n {
            for b in 0..n {
                let mut x = 0.0;
                for c in 0..n {
                    for d in 0..n {
                        x += ginv[a * n + c] * ginv[b * n + d] * hess[c * n + d];
                    }
                }
                hh += x * hess[a * n + b];
            }
        }
        sup_grad = sup_grad.max(grad2.sqrt());
        sup_hess = sup_hess.max(hh.abs().sqrt());
        if let Some(sheet) = grid.sheet_of(p) {
            let nu = outward_normal(n, ginv, sheet);
            let mut vnn = 0.0;
            for a in 0..n {
                for b in 0..n {
                    vnn += nu[a] * nu[b] * hess[a * n + b];
                }
            }
            sup_vnn = sup_vnn.max(vnn.abs());
        }
    }
    let trace_min = evaluate(spec, &v.values, 1.0).min_trace();
    let (min_v, max_v) = (v.min(), v.max());
    let all_finite = v.all_finite() && [sup_grad, sup_hess, sup_vnn, trace_min].iter().all(|x| x.is_finite());
    Ok(BoundsReport {
        c0_upper: window.upper,
        c0_lower: window.lower,
        min_v,
        max_v,
        sup_grad,
        sup_hess,
        sup_vnn_boundary: sup_vnn,
        trace_min,
        within_window: window.contains(v, WINDOW_SLACK),
        rigorous: window.rigorous,
        all_finite,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementLevel {
    pub cells: usize,
    pub h: f64,
    /// Sup error against the exact solution, when one is known.
    pub error: Option<f64>,
    pub monitors: Option<BoundsReport>,
    pub newton_iters: usize,
    pub failure: Option<String>,
}

/// Fine-over-coarse ratios of the monitors for one refinement.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonitorRatios {
    pub sup_grad: f64,
    pub sup_hess: f64,
    pub sup_vnn_boundary: f64,
    pub trace_min: f64,
}

impl MonitorRatios {
    /// Largest `|ratio - 1|`.
    pub fn max_deviation(&self) -> f64 {
        [self.sup_grad, self.sup_hess, self.sup_vnn_boundary, self.trace_min]
            .iter()
            .map(|r| if r.is_finite() { (r - 1.0).abs() } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementTable {
    pub levels: Vec<RefinementLevel>,
    /// `log₂(e_i / e_{i+1})` for consecutive levels with known errors.
    pub orders: Vec<f64>,
    pub monitor_ratios: Vec<MonitorRatios>,
}

fn ratio(fine: f64, coarse: f64) -> f64 {
    if coarse == 0.0 && fine == 0.0 {
        1.0
    } else {
        fine / coarse
    }
}

/// Solves the family produced by `build` on `levels` nested grids starting at
/// `base_cells` cells per axis: continuation on the coarsest grid, then Newton
/// at `s = 1` warm-started from the prolonged coarse solution (falling back
/// to continuation). Failed levels are recorded and end the study.
pub fn refinement_study<F>(build: F, n: usize, base_cells: usize, levels: usize) -> Result<RefinementTable>
where
    F: Fn(&GridManifold) -> Result<(ProblemSpec, Option<ScalarField>)>,
{
    if levels == 0 {
        return Err(Error::Parameter("a refinement study needs at least one level".into()));
    }
    let mut grid = GridManifold::uniform(n, base_cells)?;
    let mut rows: Vec<RefinementLevel> = vec![];
    let mut previous: Option<(GridManifold, ScalarField)> = None;
    for level in 0..levels {
        if level > 0 {
            grid = grid.refined()?;
        }
        let (spec, exact) = build(&grid)?;
        let solved = match &previous {
            None => continue_homotopy(&spec, &ScalarField::zeros(&grid))
                .map(|(v, trace)| (v, trace.iter().map(|s| s.newton_iters).sum())),
            Some((coarse, v)) => {
                let start = ScalarField::new(GridManifold::prolong(coarse, &grid, &v.values)?);
                newton_solve(&spec, 1.0, &start).map(|state| (state.v, state.newton_iters)).or_else(|err| {
                    log::info!("warm-started Newton failed on {} cells ({err}); continuing from zero", grid.shape()[0]);
                    continue_homotopy(&spec, &ScalarField::zeros(&grid))
                        .map(|(v, trace)| (v, trace.iter().map(|s| s.newton_iters).sum()))
                })
            }
        };
        let cells = grid.shape()[0];
        match solved {
            Ok((v, iters)) => {
                let monitors = estimate_monitor(&v, &spec)?;
                rows.push(RefinementLevel {
                    cells,
                    h: grid.h(),
                    error: exact.as_ref().map(|e| v.sup_diff(e)),
                    monitors: Some(monitors),
                    newton_iters: iters,
                    failure: None,
                });
                previous = Some((grid.clone(), v));
            }
            Err(err) => {
                rows.push(RefinementLevel {
                    cells,
                    h: grid.h(),
                    error: None,
                    monitors: None,
                    newton_iters: 0,
                    failure: Some(err.to_string()),
                });
                break;
            }
        }
    }
    let orders = rows
        .windows(2)
        .filter_map(|w| match (w[0].error, w[1].error) {
            (Some(a), Some(b)) => Some((a / b).log2()),
            _ => None,
        })
        .collect();
    let monitor_ratios = rows
        .windows(2)
        .filter_map(|w| match (&w[0].monitors, &w[1].monitors) {
            (Some(a), Some(b)) => Some(MonitorRatios {
                sup_grad: ratio(b.sup_grad, a.sup_grad),
                sup_hess: ratio(b.sup_hess, a.sup_hess),
                sup_vnn_boundary: ratio(b.sup_vnn_boundary, a.sup_vnn_boundary),
                trace_min: ratio(b.trace_min, a.trace_min),
            }),
            _ => None,
        })
        .collect();
    Ok(RefinementTable { levels: rows, orders, monitor_ratios })
}
