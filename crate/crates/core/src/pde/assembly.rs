//! Residual and exact Jacobian of the homotopy family
//! `f(λ_g(sW̄ + (1-s) tr_g(W̄) g)) = (sφ + 1 - s) e^{2v}`, `v_ν + h_g = s e^v ψ`,
//! with `W̄ = W_g^v - A^t_g`. Both use the same stencils, so the Jacobian is
//! the derivative of the discrete residual.

use faer::sparse::{SparseColMat, Triplet};
use serde::Serialize;
use smallvec::SmallVec;

use super::spec::ProblemSpec;
use crate::conformal::{coefficients, deformation_at};
use crate::error::{Error, Result};
use crate::geometry::boundary::outward_normal;
use crate::geometry::{dense, BoundaryField, ScalarField, TensorField};
use crate::grid::{GridManifold, Sheets};
use crate::symfunc::{AdmissibleFunction, EVAL_MARGIN};

/// Eigenvalues closer than this (relative) share an averaged derivative.
pub const CLUSTER_TOL: f64 = 1e-12;

/// Homotopy argument `sW̄ + (1-s) tr_g(W̄) g` at one node, plus `∇v`.
fn argument(spec: &ProblemSpec, v: &[f64], p: usize, s: f64) -> ([f64; 5], [f64; 25]) {
    let grid = spec.grid();
    let n = grid.n();
    let nn = n * n;
    let bg = spec.background();
    let g = spec.metric().node(p);
    let ginv = bg.ginv.node(p);
    let (dv, mut w) = deformation_at(grid, v, g, ginv, bg.curvature.christoffel.node(p), p, coefficients(n, spec.t()));
    let a = bg.curvature.schouten_t.node(p);
    for q in 0..nn {
        w[q] -= a[q];
    }
    let tr = dense::trace(n, ginv, &w[..nn]);
    for q in 0..nn {
        w[q] = s * w[q] + (1.0 - s) * tr * g[q];
    }
    (dv, w)
}

fn boundary_value(spec: &ProblemSpec, v: &[f64], dv: &[f64; 5], p: usize, s: f64) -> f64 {
    let grid = spec.grid();
    let sheet = grid.sheet_of(p).expect("boundary node");
    let j = grid.sheet_index(p);
    let nu = outward_normal(grid.n(), spec.background().ginv.node(p), sheet);
    let vn: f64 = (0..grid.n()).map(|a| nu[a] * dv[a]).sum();
    vn + spec.background().mean_curvature[sheet].values[j] - s * v[p].exp() * spec.psi()[sheet].values[j]
}

/// Residual and cone diagnostics of the homotopy equation at one `s`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub s: f64,
    /// Equation rows at interior nodes, boundary rows on the sheets. NaN where
    /// the argument leaves the cone.
    pub residual: Vec<f64>,
    /// `min_{j≤k} σ_j` of the argument's eigenvalues, every node.
    pub margin: Vec<f64>,
    /// `σ_1` of the argument's eigenvalues, every node.
    pub trace: Vec<f64>,
    /// Whether a node carries the interior equation.
    interior: Vec<bool>,
    /// Interior nodes whose argument is not safely inside the cone, and any
    /// node with non-positive trace.
    pub violations: Vec<usize>,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.residual.iter().fold(0.0, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
    }

    pub fn l2_norm(&self) -> f64 {
        self.residual.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Smallest cone margin over the nodes carrying the interior equation.
    pub fn min_margin(&self) -> f64 {
        self.margin.iter().zip(&self.interior).filter(|(_, i)| **i).map(|(m, _)| *m).fold(f64::INFINITY, f64::min)
    }

    pub fn min_trace(&self) -> f64 {
        self.trace.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Splits the residual into an interior field (zero on the sheets) and the
    /// two boundary fields.
    pub fn split(&self, grid: &GridManifold) -> (ScalarField, Sheets<BoundaryField>) {
        let interior =
            (0..grid.len()).map(|p| if grid.sheet_of(p).is_some() { 0.0 } else { self.residual[p] }).collect();
        let boundary = Sheets::from_fn(|sheet| BoundaryField {
            sheet,
            values: grid.sheet_nodes(sheet).iter().map(|&p| self.residual[p]).collect(),
        });
        (ScalarField::new(interior), boundary)
    }
}

pub fn evaluate(spec: &ProblemSpec, v: &[f64], s: f64) -> Evaluation {
    let grid = spec.grid();
    let n = grid.n();
    let cone = spec.cone();
    let len = grid.len();
    let mut residual = vec![0.0; len];
    let mut margin = vec![0.0; len];
    let mut trace = vec![0.0; len];
    let mut violations = vec![];
    let interior: Vec<bool> = (0..len).map(|p| grid.sheet_of(p).is_none()).collect();
    for p in 0..len {
        let (dv, m) = argument(spec, v, p, s);
        let lam = match dense::rel_eigenvalues(n, &m[..n * n], spec.metric().node(p)) {
            Some(l) if l.iter().all(|x| x.is_finite()) => l,
            _ => {
                residual[p] = f64::NAN;
                margin[p] = f64::NAN;
                trace[p] = f64::NAN;
                violations.push(p);
                continue;
            }
        };
        margin[p] = cone.margin(&lam);
        trace[p] = lam.iter().sum();
        let inside = cone.normalized_margin(&lam) > EVAL_MARGIN;
        if (interior[p] && !inside) || !(trace[p] > 0.0) {
            violations.push(p);
        }
        residual[p] = if !interior[p] {
            boundary_value(spec, v, &dv, p, s)
        } else if inside {
            let f = cone.value(&lam).expect("inside the cone");
            f - (s * spec.phi().values[p] + 1.0 - s) * (2.0 * v[p]).exp()
        } else {
            f64::NAN
        };
    }
    Evaluation { s, residual, margin, trace, interior, violations }
}

/// Interior and boundary residuals of the homotopy equation.
pub fn homotopy_residual(v: &ScalarField, s: f64, spec: &ProblemSpec) -> Result<(ScalarField, Sheets<BoundaryField>)> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Parameter(format!("homotopy parameter s = {s} outside [0, 1]")));
    }
    if v.len() != spec.grid().len() || !v.all_finite() {
        return Err(Error::Shape("v must be finite with one value per node".into()));
    }
    let ev = evaluate(spec, &v.values, s);
    if !ev.feasible() {
        return Err(Error::ConeViolation { nodes: ev.violations.clone(), min_margin: ev.min_margin() });
    }
    Ok(ev.split(spec.grid()))
}

/// Sparse Jacobian of the homotopy residual in compressed-row form, with
/// the coefficient fields it was assembled from.
#[derive(Debug, Clone, Serialize)]
pub struct LinearizedOperator {
    pub s: f64,
    pub size: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    /// Second-order coefficients `P^{ab}` (contravariant) at interior nodes.
    #[serde(skip)]
    pub second_order: TensorField,
    /// First-order coefficients `b^l` at interior nodes, `n` per node.
    pub first_order: Vec<f64>,
    /// `-2(sφ + 1 - s) e^{2v}` at interior nodes, `-sψ e^v` on the sheets.
    pub zeroth_order: Vec<f64>,
    /// Nodes where coalescing eigenvalues were averaged.
    pub clustered_nodes: usize,
}

type Row = SmallVec<[(usize, f64); 96]>;

/// Entries are pushed even when `scale` is zero so the sparsity pattern does
/// not depend on the coefficient values.
fn push_stencil(row: &mut Row, st: &[(usize, f64)], scale: f64) {
    row.extend(st.iter().map(|&(q, w)| (q, w * scale)));
}

fn finish_row(row: &mut Row, cols: &mut Vec<usize>, vals: &mut Vec<f64>) {
    row.sort_unstable_by_key(|e| e.0);
    let mut i = 0;
    while i < row.len() {
        let c = row[i].0;
        let mut acc = 0.0;
        while i < row.len() && row[i].0 == c {
            acc += row[i].1;
            i += 1;
        }
        cols.push(c);
        vals.push(acc);
    }
    row.clear();
}

/// `f_λ` with derivatives averaged over eigenvalue clusters; returns whether
/// any cluster was found.
fn clustered_gradient(values: &[f64], gradient: &mut [f64]) -> bool {
    let scale = values.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut clustered = false;
    let mut i = 0;
    while i < values.len() {
        let mut j = i + 1;
        while j < values.len() && values[j] - values[j - 1] <= CLUSTER_TOL * scale {
            j += 1;
        }
        if j - i > 1 {
            clustered = true;
            let mean = gradient[i..j].iter().sum::<f64>() / (j - i) as f64;
            gradient[i..j].iter_mut().for_each(|x| *x = mean);
        }
        i = j;
    }
    clustered
}

pub fn linearize(v: &ScalarField, s: f64, spec: &ProblemSpec) -> Result<LinearizedOperator> {
    let grid = spec.grid();
    let n = grid.n();
    let nn = n * n;
    let len = grid.len();
    if v.len() != len || !v.all_finite() {
        return Err(Error::Shape("v must be finite with one value per node".into()));
    }
    let cone = spec.cone();
    let bg = spec.background();
    let (c1, c2) = coefficients(n, spec.t());
    let mut row_ptr = Vec::with_capacity(len + 1);
    row_ptr.push(0);
    let mut cols = Vec::with_capacity(len * 40);
    let mut vals = Vec::with_capacity(len * 40);
    let mut second_order = TensorField::zeros(n, len);
    let mut first_order = vec![0.0; len * n];
    let mut zeroth_order = vec![0.0; len];
    let mut clustered_nodes = 0;
    let mut bad = vec![];
    let mut row = Row::new();
    for p in 0..len {
        let ginv = bg.ginv.node(p);
        let g = spec.metric().node(p);
        if let Some(sheet) = grid.sheet_of(p) {
            let nu = outward_normal(n, ginv, sheet);
            for (a, &x) in nu.iter().enumerate().take(n) {
                push_stencil(&mut row, &grid.d1(p, a), x);
            }
            let c = -s * spec.psi()[sheet].values[grid.sheet_index(p)] * v.values[p].exp();
            row.push((p, c));
            zeroth_order[p] = c;
            finish_row(&mut row, &mut cols, &mut vals);
            row_ptr.push(cols.len());
            continue;
        }
        let (dv, m) = argument(spec, &v.values, p, s);
        let eig = dense::rel_eigen(n, &m[..nn], g).ok_or(Error::Definiteness { node: p })?;
        if !(cone.normalized_margin(&eig.values) > EVAL_MARGIN) {
            bad.push(p);
            row_ptr.push(cols.len());
            continue;
        }
        let mut grad = cone.grad_hess(&eig.values)?.gradient;
        if clustered_gradient(&eig.values, &mut grad) {
            clustered_nodes += 1;
        }
        // F^{ab} = Σ_i f_i P_ai P_bi
        let mut f = [0.0; 25];
        for a in 0..n {
            for b in 0..n {
                f[a * n + b] = (0..n).map(|i| grad[i] * eig.frame[(a, i)] * eig.frame[(b, i)]).sum();
            }
        }
        let f_g = dense::trace(n, g, &f[..nn]);
        let mut gm = [0.0; 25];
        for q in 0..nn {
            gm[q] = s * f[q] + (1.0 - s) * f_g * ginv[q];
        }
        let g_g = dense::trace(n, g, &gm[..nn]);
        let pm = second_order.node_mut(p);
        for q in 0..nn {
            pm[q] = gm[q] + c1 * g_g * ginv[q];
        }
        let gamma = bg.curvature.christoffel.node(p);
        for l in 0..n {
            let mut b = 0.0;
            for a in 0..n {
                b += 2.0 * c2 * g_g * ginv[a * n + l] * dv[a] - 2.0 * gm[l * n + a] * dv[a];
            }
            for q in 0..nn {
                b -= pm[q] * gamma[l * nn + q];
            }
            first_order[p * n + l] = b;
        }
        for a in 0..n {
            push_stencil(&mut row, &grid.d2(p, a, a), pm[a * n + a]);
            for b in a + 1..n {
                push_stencil(&mut row, &grid.d2(p, a, b), 2.0 * pm[a * n + b]);
            }
        }
        for l in 0..n {
            push_stencil(&mut row, &grid.d1(p, l), first_order[p * n + l]);
        }
        let c = -2.0 * (s * spec.phi().values[p] + 1.0 - s) * (2.0 * v.values[p]).exp();
        row.push((p, c));
        zeroth_order[p] = c;
        finish_row(&mut row, &mut cols, &mut vals);
        row_ptr.push(cols.len());
    }
    if !bad.is_empty() {
        return Err(Error::ConeViolation { nodes: bad, min_margin: f64::NAN });
    }
    if clustered_nodes > 0 {
        log::debug!("averaged coalescing eigenvalue derivatives at {clustered_nodes} nodes");
    }
    Ok(LinearizedOperator {
        s,
        size: len,
        row_ptr,
        cols,
        vals,
        second_order,
        first_order,
        zeroth_order,
        clustered_nodes,
    })
}

impl LinearizedOperator {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[range.clone()].iter().cloned().zip(self.vals[range].iter().cloned())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.size).map(|r| self.row(r).map(|(c, a)| a * x[c]).sum()).collect()
    }

    /// Adds `shift` to the diagonal of every row where `mask` is set.
    pub fn shift_diagonal(&mut self, shift: f64, mask: impl Fn(usize) -> bool) {
        for r in 0..self.size {
            if !mask(r) {
                continue;
            }
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[i] == r {
                    self.vals[i] += shift;
                }
            }
        }
    }

    pub fn to_sparse(&self) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            (0..self.size).flat_map(|r| self.row(r).map(move |(c, a)| Triplet::new(r, c, a))).collect();
        SparseColMat::try_new_from_triplets(self.size, self.size, &triplets)
            .map_err(|e| Error::Shape(format!("sparse assembly failed: {e:?}")))
    }
}
