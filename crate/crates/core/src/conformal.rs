//! Conformal calculus for `g̃ = e^{2v} g`: the deformation tensor `W_g^v`,
//! transformed Schouten tensor and mean curvature, the governing residual,
//! and the two background gauges used by the C⁰ windows.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::boundary::{normal_derivative, smoothstep};
use crate::geometry::curvature::{check_t, CurvatureBundle};
use crate::geometry::{
    boundary_mean_curvature, christoffels, dense, extend_pair, ricci_scalar, BoundaryField, Christoffels, EigenField,
    MetricField, ScalarField, TensorField,
};
use crate::grid::{GridManifold, Sheet, Sheets};
use crate::pde::ProblemSpec;
use crate::symfunc::AdmissibleFunction;

/// Per-node symmetric `W_g^v`.
pub type DeformationTensor = TensorField;

/// Coefficients `((1-t)/(n-2), (2-t)/2)` of the Laplacian and gradient terms.
pub fn coefficients(n: usize, t: f64) -> (f64, f64) {
    ((1.0 - t) / (n as f64 - 2.0), (2.0 - t) / 2.0)
}

/// Gradient and covariant Hessian `∇²v` at one node from the grid stencils.
pub(crate) fn gradient_hessian_at(grid: &GridManifold, v: &[f64], gamma: &[f64], p: usize) -> ([f64; 5], [f64; 25]) {
    let n = grid.n();
    let nn = n * n;
    let mut dv = [0.0; 5];
    for (a, d) in dv.iter_mut().enumerate().take(n) {
        *d = GridManifold::apply(&grid.d1(p, a), v, 1, 0);
    }
    let mut hess = [0.0; 25];
    for a in 0..n {
        for b in a..n {
            let mut x = GridManifold::apply(&grid.d2(p, a, b), v, 1, 0);
            for l in 0..n {
                x -= gamma[l * nn + a * n + b] * dv[l];
            }
            hess[a * n + b] = x;
            hess[b * n + a] = x;
        }
    }
    (dv, hess)
}

/// Gradient and `W_g^v` at one node, both from the grid stencils.
pub(crate) fn deformation_at(
    grid: &GridManifold,
    v: &[f64],
    g: &[f64],
    ginv: &[f64],
    gamma: &[f64],
    p: usize,
    (c1, c2): (f64, f64),
) -> ([f64; 5], [f64; 25]) {
    let n = grid.n();
    let nn = n * n;
    let (dv, mut w) = gradient_hessian_at(grid, v, gamma, p);
    let lap = dense::trace(n, ginv, &w[..nn]);
    let mut grad2 = 0.0;
    for a in 0..n {
        for b in 0..n {
            grad2 += ginv[a * n + b] * dv[a] * dv[b];
        }
    }
    for a in 0..n {
        for b in 0..n {
            w[a * n + b] += (c1 * lap + c2 * grad2) * g[a * n + b] - dv[a] * dv[b];
        }
    }
    (dv, w)
}

fn check_field(v: &ScalarField, grid: &GridManifold) -> Result<()> {
    if v.len() != grid.len() {
        return Err(Error::Shape(format!("field has {} values, grid has {} nodes", v.len(), grid.len())));
    }
    if !v.all_finite() {
        return Err(Error::Domain("field has non-finite values".into()));
    }
    Ok(())
}

pub fn deformation_tensor(v: &ScalarField, g: &MetricField, grid: &GridManifold, t: f64) -> Result<DeformationTensor> {
    check_t(t)?;
    check_field(v, grid)?;
    let gamma = christoffels(g, grid)?;
    Ok(deformation_with(v, g, &g.inverse(), &gamma, grid, t))
}

pub(crate) fn deformation_with(
    v: &ScalarField,
    g: &MetricField,
    ginv: &TensorField,
    gamma: &Christoffels,
    grid: &GridManifold,
    t: f64,
) -> DeformationTensor {
    let c = coefficients(grid.n(), t);
    TensorField::from_fn(grid, |p, out| {
        let (_, w) = deformation_at(grid, &v.values, g.node(p), ginv.node(p), gamma.node(p), p, c);
        out.copy_from_slice(&w[..out.len()]);
    })
}

/// `A^t_{g̃} = A^t_g - W_g^v` and `λ_{g̃}(A^t_{g̃}) = e^{-2v} λ_g(A^t_g - W_g^v)`.
pub fn pushforward_schouten(
    v: &ScalarField,
    g: &MetricField,
    grid: &GridManifold,
    t: f64,
) -> Result<(TensorField, EigenField)> {
    check_field(v, grid)?;
    let bundle = CurvatureBundle::compute(g, grid, t)?;
    pushforward_schouten_with(v, g, grid, &bundle)
}

pub fn pushforward_schouten_with(
    v: &ScalarField,
    g: &MetricField,
    grid: &GridManifold,
    bundle: &CurvatureBundle,
) -> Result<(TensorField, EigenField)> {
    check_field(v, grid)?;
    let w = deformation_with(v, g, &g.inverse(), &bundle.christoffel, grid, bundle.t);
    let a = bundle.schouten_t.sub(&w);
    let n = grid.n();
    let mut values = Vec::with_capacity(grid.len() * n);
    for p in 0..grid.len() {
        let scale = (-2.0 * v.values[p]).exp();
        let lam = dense::rel_eigenvalues(n, a.node(p), g.node(p)).ok_or(Error::Definiteness { node: p })?;
        values.extend(lam.iter().map(|x| scale * x));
    }
    Ok((a, EigenField::new(n, values)))
}

/// `h_{g̃} = (h_g + v_ν) e^{-v}` on both sheets.
pub fn pushforward_mean_curvature(
    v: &ScalarField,
    g: &MetricField,
    grid: &GridManifold,
) -> Result<Sheets<BoundaryField>> {
    check_field(v, grid)?;
    let h = boundary_mean_curvature(g, grid)?;
    Ok(pushforward_mean_curvature_with(v, &g.inverse(), grid, &h))
}

pub(crate) fn pushforward_mean_curvature_with(
    v: &ScalarField,
    ginv: &TensorField,
    grid: &GridManifold,
    h: &Sheets<BoundaryField>,
) -> Sheets<BoundaryField> {
    Sheets::from_fn(|sheet| {
        let dn = normal_derivative(v, ginv, grid, sheet);
        let values = grid
            .sheet_nodes(sheet)
            .iter()
            .enumerate()
            .map(|(j, &p)| (h[sheet].values[j] + dn.values[j]) * (-v.values[p]).exp())
            .collect();
        BoundaryField { sheet, values }
    })
}

/// Depth up to which the surrogate is the exact (scaled) distance.
pub const SURROGATE_LINEAR_DEPTH: f64 = 0.125;
/// Interior value of the cap, reached at depth 3/8.
pub const SURROGATE_CAP: f64 = 0.25;

/// `d` for `d ≤ 1/8`, then a `C²` quintic rising to `1/4` at `d = 3/8` and
/// constant beyond.
fn cap(d: f64) -> f64 {
    if d <= SURROGATE_LINEAR_DEPTH {
        return d;
    }
    let u = ((d - SURROGATE_LINEAR_DEPTH) / 0.25).min(1.0);
    SURROGATE_LINEAR_DEPTH + 0.25 * (u - u.powi(6) + 3.0 * u.powi(5) - 2.5 * u.powi(4))
}

/// Smooth distance-to-boundary surrogate with `w = 0` and `w_ν = -1` on both
/// sheets, values in `[0, 1/4]` (times the local normal scale).
///
/// Near each sheet `w = cap(depth)/√g^{nn}`, with `g^{nn}` frozen at the foot
/// node; the two sheets are blended across the middle of the slab.
pub fn distance_surrogate(g: &MetricField, grid: &GridManifold) -> Result<ScalarField> {
    if g.len() != grid.len() || g.n() != grid.n() {
        return Err(Error::Shape("metric does not match grid".into()));
    }
    let n = grid.n();
    let last = n * n - 1;
    let scales = Sheets::from_fn(|sheet| {
        grid.sheet_nodes(sheet)
            .into_iter()
            .map(|p| {
                let ginv = dense::inverse_spd(n, g.node(p)).expect("validated metric");
                1.0 / ginv[last].sqrt()
            })
            .collect::<Vec<f64>>()
    });
    Ok(ScalarField::new(
        (0..grid.len())
            .map(|p| {
                let j = grid.sheet_index(p);
                let y = grid.coord(p, n - 1);
                let blend = smoothstep((y - 0.375) / 0.25);
                let lower = scales.lower[j] * cap(y);
                let upper = scales.upper[j] * cap(1.0 - y);
                (1.0 - blend) * lower + blend * upper
            })
            .collect(),
    ))
}

/// `g1 = e^{2 h̄ w} g` with `h̄` the extension of the boundary mean curvature.
/// Returns `(g1, v0)`.
pub fn zero_mean_curvature_gauge(g: &MetricField, grid: &GridManifold) -> Result<(MetricField, ScalarField)> {
    let h = boundary_mean_curvature(g, grid)?;
    let hbar = extend_pair(&h, grid)?;
    let w = distance_surrogate(g, grid)?;
    let v0 = hbar.zip_with(&w, |a, b| a * b);
    Ok((g.conformal(grid, &v0)?, v0))
}

/// Depth of the boundary collar inspected by the pinch diagnostic.
pub const COLLAR_DEPTH: f64 = 0.125;

#[derive(Debug, Clone, Serialize)]
pub struct PinchGauge {
    #[serde(skip)]
    pub metric: MetricField,
    pub constant: f64,
    /// Largest eigenvalue of `Ric_{g2}` relative to `g1` over the collar.
    pub collar_max: f64,
}

fn collar_max_eigenvalue(ricci: &TensorField, g1: &MetricField, grid: &GridManifold) -> Result<f64> {
    let n = grid.n();
    let mut worst = f64::NEG_INFINITY;
    for p in 0..grid.len() {
        let depth = grid.depth(p, Sheet::Lower).min(grid.depth(p, Sheet::Upper));
        if depth <= COLLAR_DEPTH + 1e-12 {
            let lam = dense::rel_eigenvalues(n, ricci.node(p), g1.node(p)).ok_or(Error::Definiteness { node: p })?;
            worst = worst.max(lam[n - 1]);
        }
    }
    Ok(worst)
}

/// `g2 = e^{2A w1²} g1`, with the collar Ricci diagnostic.
pub fn ricci_pinch_gauge(g1: &MetricField, grid: &GridManifold, a: f64) -> Result<PinchGauge> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::Parameter(format!("pinch constant {a} must be non-negative")));
    }
    let w1 = distance_surrogate(g1, grid)?;
    let metric = if a == 0.0 { g1.clone() } else { g1.conformal(grid, &w1.map(|x| a * x * x))? };
    let (ricci, _) = ricci_scalar(&metric, grid)?;
    let collar_max = collar_max_eigenvalue(&ricci, g1, grid)?;
    Ok(PinchGauge { metric, constant: a, collar_max })
}

#[derive(Debug, Clone, Serialize)]
pub struct PinchChoice {
    /// Collar maximum of the Ricci eigenvalues of `g1` itself.
    pub c1: f64,
    pub initial: f64,
    pub gauge: PinchGauge,
    pub satisfied: bool,
}

/// Starts from `A = max(C₁,0)/2 + 1/2` and grows `A` by 25% until every collar
/// Ricci eigenvalue is at most `-1`. When the grid cannot resolve the pinch
/// the search stops at the last finite gauge and reports `satisfied = false`.
pub fn choose_pinch_constant(g1: &MetricField, grid: &GridManifold) -> Result<PinchChoice> {
    let (ricci, _) = ricci_scalar(g1, grid)?;
    let c1 = collar_max_eigenvalue(&ricci, g1, grid)?;
    let initial = c1.max(0.0) / 2.0 + 0.5;
    let mut a = initial;
    let mut last = ricci_pinch_gauge(g1, grid, a)?;
    for _ in 0..40 {
        if last.collar_max <= -1.0 {
            return Ok(PinchChoice { c1, initial, gauge: last, satisfied: true });
        }
        a *= 1.25;
        // An unresolved pinch overflows long before A stops growing.
        match ricci_pinch_gauge(g1, grid, a) {
            Ok(gauge) if gauge.collar_max.is_finite() => last = gauge,
            _ => break,
        }
    }
    let satisfied = last.collar_max <= -1.0;
    Ok(PinchChoice { c1, initial, gauge: last, satisfied })
}

/// Governing residual at `s = 1`.
#[derive(Debug, Clone)]
pub struct Residual {
    /// `f(λ_g(W_g^v - A^t_g)) - φ e^{2v}`; zero on the sheets, where the
    /// boundary condition replaces the equation, and NaN where the argument
    /// leaves the cone.
    pub interior: ScalarField,
    /// `h_g + v_ν - e^v ψ`.
    pub boundary: Sheets<BoundaryField>,
    /// `min_{j≤k} σ_j(λ_g(W_g^v - A^t_g))` at every node.
    pub cone_margin: ScalarField,
}

impl Residual {
    pub fn sup_norm(&self) -> f64 {
        let b = self.boundary.lower.sup_norm().max(self.boundary.upper.sup_norm());
        self.interior.values.iter().fold(b, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
    }

    pub fn min_margin(&self) -> f64 {
        self.cone_margin.min()
    }

    /// Nodes where the argument is outside the cone.
    pub fn violations(&self) -> Vec<usize> {
        (0..self.cone_margin.len()).filter(|&p| !(self.cone_margin.values[p] > 0.0)).collect()
    }
}

pub fn residual(v: &ScalarField, spec: &ProblemSpec) -> Result<Residual> {
    let grid = spec.grid();
    check_field(v, grid)?;
    let g = spec.metric();
    let bg = spec.background();
    let w = deformation_with(v, g, &bg.ginv, &bg.curvature.christoffel, grid, spec.t());
    let wbar = w.sub(&bg.curvature.schouten_t);
    let lambda = crate::geometry::rel_eigenvalues(&wbar, g)?;
    let cone = spec.cone();
    let mut interior = vec![0.0; grid.len()];
    let mut margin = vec![0.0; grid.len()];
    for p in 0..grid.len() {
        let lam = lambda.node(p);
        margin[p] = cone.margin(lam);
        if grid.sheet_of(p).is_some() {
            continue;
        }
        interior[p] = match cone.value(lam) {
            Ok(f) => f - spec.phi().values[p] * (2.0 * v.values[p]).exp(),
            Err(_) => f64::NAN,
        };
    }
    let dn = Sheets::from_fn(|sheet| normal_derivative(v, &bg.ginv, grid, sheet));
    let boundary = Sheets::from_fn(|sheet| {
        let values = grid
            .sheet_nodes(sheet)
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                bg.mean_curvature[sheet].values[j] + dn[sheet].values[j]
                    - v.values[p].exp() * spec.psi()[sheet].values[j]
            })
            .collect();
        BoundaryField { sheet, values }
    });
    Ok(Residual { interior: ScalarField::new(interior), boundary, cone_margin: ScalarField::new(margin) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rel_eigenvalues;
    use approx::assert_relative_eq;

    fn smooth_v(grid: &GridManifold, seed: u64) -> ScalarField {
        let s = seed as f64;
        let two_pi = 2.0 * std::f64::consts::PI;
        ScalarField::from_fn(grid, |y| {
            0.1 * (two_pi * y[0] + 0.3 * s).sin() * (two_pi * y[1] + 0.7 * s).cos()
                + 0.15 * (1.3 * y[2] + 0.2 * s).sin()
                + 0.05 * s * y[2] * y[2]
        })
    }

    #[test]
    fn constant_v_has_no_deformation() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let g = MetricField::hyperbolic_slab(&grid);
        let w = deformation_tensor(&ScalarField::constant(&grid, 0.7), &g, &grid, 0.2).unwrap();
        assert!(w.raw().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn linear_v_on_flat_patch() {
        let grid = GridManifold::new(vec![16, 16, 17], vec![1.0, 1.0]).unwrap();
        let g = MetricField::flat(&grid);
        // y_1 is not periodic on the torus; the normal coordinate plays its role.
        let v = ScalarField::from_fn(&grid, |y| y[2]);
        for t in [0.0, 0.5, -1.0] {
            let w = deformation_tensor(&v, &g, &grid, t).unwrap();
            for p in 0..grid.len() {
                for i in 0..3 {
                    for j in 0..3 {
                        let expect =
                            if i == j { (2.0 - t) / 2.0 } else { 0.0 } - if i == 2 && j == 2 { 1.0 } else { 0.0 };
                        assert_relative_eq!(w.get(p, i, j), expect, epsilon = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_square_dominates_outer_product() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let g = MetricField::hyperbolic_slab(&grid);
        let ginv = g.inverse();
        let v = smooth_v(&grid, 3);
        for p in 0..grid.len() {
            let dv: Vec<f64> = (0..3).map(|a| GridManifold::apply(&grid.d1(p, a), &v.values, 1, 0)).collect();
            let grad2: f64 = (0..9).map(|q| ginv.node(p)[q] * dv[q / 3] * dv[q % 3]).sum();
            let diff: Vec<f64> = (0..9).map(|q| grad2 * g.node(p)[q] - dv[q / 3] * dv[q % 3]).collect();
            let lam = dense::rel_eigenvalues(3, &diff, g.node(p)).unwrap();
            assert!(lam[0] > -1e-12 * grad2.max(1.0));
        }
    }

    #[test]
    fn hessian_part_is_linear() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let g = MetricField::hyperbolic_slab(&grid);
        let (v1, v2) = (smooth_v(&grid, 1), smooth_v(&grid, 2));
        let t = 0.3;
        let sum = v1.zip_with(&v2, |a, b| a + b);
        let w12 = deformation_tensor(&sum, &g, &grid, t).unwrap();
        let w1 = deformation_tensor(&v1, &g, &grid, t).unwrap();
        let w2 = deformation_tensor(&v2, &g, &grid, t).unwrap();
        let ginv = g.inverse();
        let (_, c2) = coefficients(3, t);
        for p in 0..grid.len() {
            let d1: Vec<f64> = (0..3).map(|a| GridManifold::apply(&grid.d1(p, a), &v1.values, 1, 0)).collect();
            let d2: Vec<f64> = (0..3).map(|a| GridManifold::apply(&grid.d1(p, a), &v2.values, 1, 0)).collect();
            let cross: f64 = (0..9).map(|q| ginv.node(p)[q] * d1[q / 3] * d2[q % 3]).sum();
            for q in 0..9 {
                let (a, b) = (q / 3, q % 3);
                let expect = 2.0 * c2 * cross * g.node(p)[q] - d1[a] * d2[b] - d2[a] * d1[b];
                let got = w12.node(p)[q] - w1.node(p)[q] - w2.node(p)[q];
                assert_relative_eq!(got, expect, epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn constant_shift_scales_slab_eigenvalues() {
        let grid = GridManifold::uniform(3, 16).unwrap();
        let g = MetricField::hyperbolic_slab(&grid);
        let c = 0.4;
        let (_, lam) = pushforward_schouten(&ScalarField::constant(&grid, c), &g, &grid, 0.0).unwrap();
        let b = CurvatureBundle::compute(&g, &grid, 0.0).unwrap();
        let direct = rel_eigenvalues(&b.schouten_t, &g).unwrap();
        let scale = (-2.0 * c).exp();
        for p in 0..grid.len() {
            for i in 0..3 {
                assert_relative_eq!(lam.node(p)[i], scale * direct.node(p)[i], epsilon = 1e-12);
            }
        }
        // Interior nodes see the exact curvature -2 up to truncation error.
        for p in 0..grid.len() {
            if Sheet::BOTH.iter().all(|&sh| grid.depth(p, sh) >= 0.25) {
                for i in 0..3 {
                    assert!((lam.node(p)[i] + 2.0 * scale).abs() < 2e-2, "{}", lam.node(p)[i]);
                }
            }
        }
        let (_, lam0) = pushforward_schouten(&ScalarField::zeros(&grid), &g, &grid, 0.0).unwrap();
        assert!(lam0.sup_diff(&direct) < 1e-13);
    }

    /// Sup error of the pushforward against direct curvature of `e^{2v}g`.
    fn two_path_errors(g_of: impl Fn(&GridManifold) -> MetricField, seed: u64, t: f64) -> (Vec<f64>, Vec<f64>) {
        let mut eig = vec![];
        let mut mean = vec![];
        for m in [16, 32] {
            let grid = GridManifold::uniform(3, m).unwrap();
            let g = g_of(&grid);
            let v = smooth_v(&grid, seed);
            let (_, push) = pushforward_schouten(&v, &g, &grid, t).unwrap();
            let gt = g.conformal(&grid, &v).unwrap();
            let b = CurvatureBundle::compute(&gt, &grid, t).unwrap();
            let direct = rel_eigenvalues(&b.schouten_t, &gt).unwrap();
            eig.push(push.sup_diff(&direct));
            let hp = pushforward_mean_curvature(&v, &g, &grid).unwrap();
            let hd = boundary_mean_curvature(&gt, &grid).unwrap();
            mean.push(hp.lower.sup_diff(&hd.lower).max(hp.upper.sup_diff(&hd.upper)));
        }
        (eig, mean)
    }

    #[test]
    fn two_path_identity_is_second_order() {
        for (seed, t) in [(1, 0.0), (2, 0.5)] {
            let (eig, mean) = two_path_errors(MetricField::hyperbolic_slab, seed, t);
            for errs in [&eig, &mean] {
                let order = (errs[0] / errs[1]).log2();
                assert!((1.7..=2.3).contains(&order), "seed {seed}: {errs:?} order {order}");
            }
        }
    }

    #[test]
    fn mean_curvature_examples() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let g = MetricField::flat(&grid);
        let v = ScalarField::from_fn(&grid, |y| y[2]);
        let h = pushforward_mean_curvature(&v, &g, &grid).unwrap();
        assert!(h.lower.values.iter().all(|x| (x + 1.0).abs() < 1e-12));
        let slab = MetricField::hyperbolic_slab(&grid);
        let h0 = boundary_mean_curvature(&slab, &grid).unwrap();
        let c = 2f64.ln();
        let h = pushforward_mean_curvature(&ScalarField::constant(&grid, c), &slab, &grid).unwrap();
        for (a, b) in h.lower.values.iter().zip(&h0.lower.values) {
            assert_relative_eq!(*a, 0.5 * b, epsilon = 1e-14);
        }
    }

    #[test]
    fn surrogate_has_unit_inward_slope() {
        for m in [16, 32] {
            let grid = GridManifold::uniform(3, m).unwrap();
            for g in [MetricField::flat(&grid), MetricField::hyperbolic_slab(&grid)] {
                let w = distance_surrogate(&g, &grid).unwrap();
                let ginv = g.inverse();
                for sheet in Sheet::BOTH {
                    let dn = normal_derivative(&w, &ginv, &grid, sheet);
                    assert!(dn.values.iter().all(|x| (x + 1.0).abs() < 1e-12), "{:?}", dn.values[0]);
                    assert!(grid.sheet_nodes(sheet).iter().all(|&p| w.values[p] == 0.0));
                }
                assert!(w.values.iter().all(|&x| x >= 0.0));
            }
        }
        let grid = GridManifold::uniform(3, 16).unwrap();
        let w = distance_surrogate(&MetricField::flat(&grid), &grid).unwrap();
        for p in 0..grid.len() {
            let y = grid.coord(p, 2);
            let d = y.min(1.0 - y);
            if d <= SURROGATE_LINEAR_DEPTH {
                assert_relative_eq!(w.values[p], d, epsilon = 1e-15);
            }
            if (0.375..=0.625).contains(&y) {
                assert_relative_eq!(w.values[p], SURROGATE_CAP, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn cap_is_twice_differentiable() {
        let h = 1e-5;
        for d in [SURROGATE_LINEAR_DEPTH, 0.375] {
            let left = (cap(d) - cap(d - h)) / h;
            let right = (cap(d + h) - cap(d)) / h;
            assert!((left - right).abs() < 1e-4, "{d}: {left} {right}");
            let c2l = (cap(d) - 2.0 * cap(d - h) + cap(d - 2.0 * h)) / (h * h);
            let c2r = (cap(d + 2.0 * h) - 2.0 * cap(d + h) + cap(d)) / (h * h);
            assert!((c2l - c2r).abs() < 1e-2, "{d}: {c2l} {c2r}");
        }
        assert_relative_eq!(cap(0.375), SURROGATE_CAP, epsilon = 1e-15);
    }

    #[test]
    fn zero_gauge_cancels_mean_curvature() {
        let mut errs = vec![];
        for m in [16, 32] {
            let grid = GridManifold::uniform(3, m).unwrap();
            let g = MetricField::hyperbolic_slab(&grid);
            let (g1, v0) = zero_mean_curvature_gauge(&g, &grid).unwrap();
            let h1 = boundary_mean_curvature(&g1, &grid).unwrap();
            let hp = pushforward_mean_curvature(&v0, &g, &grid).unwrap();
            assert!(hp.lower.sup_norm() < 1e-12 && hp.upper.sup_norm() < 1e-12);
            errs.push(h1.lower.sup_norm().max(h1.upper.sup_norm()));
            // idempotence on the sheets
            let (g2, _) = zero_mean_curvature_gauge(&g1, &grid).unwrap();
            for sheet in Sheet::BOTH {
                for p in grid.sheet_nodes(sheet) {
                    for q in 0..9 {
                        assert!((g2.node(p)[q] - g1.node(p)[q]).abs() < 0.1 * grid.h() * grid.h());
                    }
                }
            }
        }
        assert!(errs[1] < 1e-2, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn zero_gauge_is_identity_for_minimal_sheets() {
        let grid = GridManifold::uniform(3, 16).unwrap();
        let g = MetricField::flat(&grid);
        let (g1, v0) = zero_mean_curvature_gauge(&g, &grid).unwrap();
        assert_eq!(v0.sup_norm(), 0.0);
        assert_eq!(g1, g);
    }

    #[test]
    fn pinch_zero_is_identity() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let g = MetricField::flat(&grid);
        let pinch = ricci_pinch_gauge(&g, &grid, 0.0).unwrap();
        assert_eq!(pinch.metric, g);
        assert_eq!(pinch.collar_max, 0.0);
    }

    #[test]
    fn pinch_decreases_collar_ricci() {
        let grid = GridManifold::uniform(3, 16).unwrap();
        let g = MetricField::flat(&grid);
        let mut prev = f64::INFINITY;
        for a in [0.25, 0.5, 1.0, 2.0] {
            let pinch = ricci_pinch_gauge(&g, &grid, a).unwrap();
            assert!(pinch.collar_max < prev, "{a}: {}", pinch.collar_max);
            prev = pinch.collar_max;
            let h = boundary_mean_curvature(&pinch.metric, &grid).unwrap();
            let bound = 20.0 * a * a * grid.h().powi(3);
            assert!(h.lower.sup_norm() < bound && h.upper.sup_norm() < bound);
        }
        let choice = choose_pinch_constant(&g, &grid).unwrap();
        assert!(choice.satisfied && choice.gauge.collar_max <= -1.0);
    }

    #[test]
    fn unresolved_pinch_is_reported_not_raised() {
        let grid = GridManifold::uniform(3, 16).unwrap();
        let (g1, _) = zero_mean_curvature_gauge(&MetricField::hyperbolic_slab(&grid), &grid).unwrap();
        let choice = choose_pinch_constant(&g1, &grid).unwrap();
        assert!(!choice.satisfied);
        assert!(choice.gauge.collar_max.is_finite());
    }
}
