use nalgebra::DMatrix;

use super::curvature::{christoffels, Christoffels};
use super::dense;
use super::field::{BoundaryField, MetricField, ScalarField, TensorField};
use crate::error::{Error, Result};
use crate::grid::{GridManifold, Sheet, Sheets};

/// Depth beyond which boundary-field extensions vanish.
pub const EXTENSION_DEPTH: f64 = 0.25;
/// Depth up to which extensions are constant along the normal.
pub const EXTENSION_PLATEAU: f64 = 0.125;

/// Quintic smoothstep on `[0,1]`, clamped outside.
pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

/// Extension profile: `1` up to [`EXTENSION_PLATEAU`], `0` beyond
/// [`EXTENSION_DEPTH`], `C²`. The plateau keeps the boundary stencils blind to
/// the roll-off.
pub fn cutoff(depth: f64) -> f64 {
    1.0 - smoothstep((depth - EXTENSION_PLATEAU) / (EXTENSION_DEPTH - EXTENSION_PLATEAU))
}

/// Outward unit normal `ν^j = ±g^{nj}/√g^{nn}` from the inverse metric at a node.
pub fn outward_normal(n: usize, ginv: &[f64], sheet: Sheet) -> [f64; 5] {
    let last = n - 1;
    let scale = sheet.outward_sign() / ginv[last * n + last].sqrt();
    let mut nu = [0.0; 5];
    for (j, x) in nu.iter_mut().enumerate().take(n) {
        *x = scale * ginv[last * n + j];
    }
    nu
}

/// Mean curvature of the level set `{y_n = const}` through node `p`, oriented
/// by the outward normal of `sheet`.
///
/// For a tangential frame `∂_i` of the level set, `g(∇_i ν, ∂_j) = -ν_l Γ^l_{ij}`
/// with `ν♭ = ±dy_n/|dy_n|`, so `h = ∓ (Σ ĝ^{ij} Γ^n_{ij}) / ((n-1)√g^{nn})` where
/// `ĝ` is the induced metric.
pub fn level_set_mean_curvature(n: usize, g: &[f64], ginv: &[f64], gamma: &[f64], sheet: Sheet) -> Option<f64> {
    let m = n - 1;
    let induced = DMatrix::from_fn(m, m, |i, j| g[i * n + j]);
    let induced_inv = induced.cholesky()?.inverse();
    let mut trace = 0.0;
    for i in 0..m {
        for j in 0..m {
            trace += induced_inv[(i, j)] * gamma[m * n * n + i * n + j];
        }
    }
    let gnn = ginv[m * n + m];
    Some(-sheet.outward_sign() * trace / (m as f64 * gnn.sqrt()))
}

pub fn boundary_mean_curvature(g: &MetricField, grid: &GridManifold) -> Result<Sheets<BoundaryField>> {
    let gamma = christoffels(g, grid)?;
    boundary_mean_curvature_with(g, grid, &gamma)
}

pub fn boundary_mean_curvature_with(
    g: &MetricField,
    grid: &GridManifold,
    gamma: &Christoffels,
) -> Result<Sheets<BoundaryField>> {
    let n = grid.n();
    let sheet_values = |sheet: Sheet| -> Result<BoundaryField> {
        let mut values = Vec::with_capacity(grid.sheet_len());
        for p in grid.sheet_nodes(sheet) {
            let ginv = dense::inverse_spd(n, g.node(p)).ok_or(Error::Definiteness { node: p })?;
            let h = level_set_mean_curvature(n, g.node(p), &ginv, gamma.node(p), sheet)
                .ok_or(Error::Definiteness { node: p })?;
            values.push(h);
        }
        Ok(BoundaryField { sheet, values })
    };
    Ok(Sheets::new(sheet_values(Sheet::Lower)?, sheet_values(Sheet::Upper)?))
}

/// `ψ̄(y') χ(depth)`; the two sheets' contributions are summed.
pub fn extend_boundary_field(field: &BoundaryField, grid: &GridManifold) -> Result<ScalarField> {
    if field.values.len() != grid.sheet_len() {
        return Err(Error::Shape("boundary field does not cover its sheet".into()));
    }
    Ok(ScalarField::new(
        (0..grid.len()).map(|p| field.values[grid.sheet_index(p)] * cutoff(grid.depth(p, field.sheet))).collect(),
    ))
}

pub fn extend_pair(fields: &Sheets<BoundaryField>, grid: &GridManifold) -> Result<ScalarField> {
    let lower = extend_boundary_field(&fields.lower, grid)?;
    let upper = extend_boundary_field(&fields.upper, grid)?;
    Ok(lower.zip_with(&upper, |a, b| a + b))
}

/// Extension of `h_g` by the mean curvatures of the parallel level sets,
/// cut off at [`EXTENSION_DEPTH`].
pub fn extend_mean_curvature_trace(g: &MetricField, grid: &GridManifold) -> Result<ScalarField> {
    let n = grid.n();
    let gamma = christoffels(g, grid)?;
    let mut values = vec![0.0; grid.len()];
    for (p, slot) in values.iter_mut().enumerate() {
        let ginv = dense::inverse_spd(n, g.node(p)).ok_or(Error::Definiteness { node: p })?;
        for sheet in Sheet::BOTH {
            let chi = cutoff(grid.depth(p, sheet));
            if chi > 0.0 {
                let h = level_set_mean_curvature(n, g.node(p), &ginv, gamma.node(p), sheet)
                    .ok_or(Error::Definiteness { node: p })?;
                *slot += chi * h;
            }
        }
    }
    Ok(ScalarField::new(values))
}

/// Normal derivative `v_ν = ν^j ∂_j v` on a sheet, with one-sided differences
/// across the boundary.
pub fn normal_derivative(v: &ScalarField, ginv: &TensorField, grid: &GridManifold, sheet: Sheet) -> BoundaryField {
    let n = grid.n();
    let values = grid
        .sheet_nodes(sheet)
        .into_iter()
        .map(|p| {
            let nu = outward_normal(n, ginv.node(p), sheet);
            (0..n).map(|j| nu[j] * GridManifold::apply(&grid.d1(p, j), &v.values, 1, 0)).sum()
        })
        .collect();
    BoundaryField { sheet, values }
}
