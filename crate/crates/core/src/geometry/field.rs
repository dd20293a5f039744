use serde::{Deserialize, Serialize};

use super::dense;
use crate::error::{Error, Result};
use crate::grid::{GridManifold, Sheet};

/// One real value per grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(grid: &GridManifold) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &GridManifold, c: f64) -> Self {
        Self { values: vec![c; grid.len()] }
    }

    /// Samples `f(y)` at every node coordinate.
    pub fn from_fn(grid: &GridManifold, f: impl Fn(&[f64]) -> f64) -> Self {
        Self { values: (0..grid.len()).map(|p| f(&grid.coords(p))).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sup_diff(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        Self { values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }
}

/// Symmetric `(0,2)` tensor per node, stored as full row-major `n x n` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    n: usize,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(n: usize, len: usize) -> Self {
        Self { n, data: vec![0.0; len * n * n] }
    }

    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() % (n * n) != 0 {
            return Err(Error::Shape(format!("tensor data of length {} is not a multiple of {}", data.len(), n * n)));
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(grid: &GridManifold, mut f: impl FnMut(usize, &mut [f64])) -> Self {
        let n = grid.n();
        let mut out = Self::zeros(n, grid.len());
        for p in 0..grid.len() {
            f(p, out.node_mut(p));
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.n * self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn node(&self, p: usize) -> &[f64] {
        let m = self.n * self.n;
        &self.data[p * m..(p + 1) * m]
    }

    pub fn node_mut(&mut self, p: usize) -> &mut [f64] {
        let m = self.n * self.n;
        &mut self.data[p * m..(p + 1) * m]
    }

    pub fn get(&self, p: usize, i: usize, j: usize) -> f64 {
        self.data[(p * self.n + i) * self.n + j]
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, factor: &ScalarField) -> Self {
        let m = self.n * self.n;
        let data = self.data.iter().enumerate().map(|(q, x)| x * factor.values[q / m]).collect();
        Self { n: self.n, data }
    }

    pub fn sub(&self, other: &TensorField) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { n: self.n, data }
    }

    pub fn sup_diff(&self, other: &TensorField) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest `|T_ij - T_ji|` over all nodes.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for p in 0..self.len() {
            let t = self.node(p);
            for i in 0..n {
                for j in 0..i {
                    worst = worst.max((t[i * n + j] - t[j * n + i]).abs());
                }
            }
        }
        worst
    }
}

/// Positive-definite metric per node.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    tensor: TensorField,
}

impl MetricField {
    /// Validates symmetry (to round-off, then symmetrizes exactly) and
    /// positive definiteness at every node.
    pub fn new(grid: &GridManifold, tensor: TensorField) -> Result<Self> {
        let n = grid.n();
        if tensor.n() != n || tensor.len() != grid.len() {
            return Err(Error::Shape(format!(
                "metric has {} nodes of size {}, grid expects {} of size {n}",
                tensor.len(),
                tensor.n(),
                grid.len()
            )));
        }
        let mut tensor = tensor;
        for p in 0..grid.len() {
            let g = tensor.node_mut(p);
            let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for i in 0..n {
                for j in 0..i {
                    let (a, b) = (g[i * n + j], g[j * n + i]);
                    if (a - b).abs() > 1e-12 * scale {
                        return Err(Error::Domain(format!("metric is not symmetric at node {p}")));
                    }
                    let m = 0.5 * (a + b);
                    g[i * n + j] = m;
                    g[j * n + i] = m;
                }
            }
            if dense::cholesky(n, g).is_none() {
                return Err(Error::Definiteness { node: p });
            }
        }
        Ok(Self { tensor })
    }

    pub fn flat(grid: &GridManifold) -> Self {
        Self::conformally_flat(grid, &ScalarField::zeros(grid)).expect("flat metric is valid")
    }

    /// `e^{2u} δ`.
    pub fn conformally_flat(grid: &GridManifold, u: &ScalarField) -> Result<Self> {
        let n = grid.n();
        if u.len() != grid.len() || !u.all_finite() {
            return Err(Error::Shape("conformal factor must be finite with one value per node".into()));
        }
        let tensor = TensorField::from_fn(grid, |p, g| {
            let s = (2.0 * u.values[p]).exp();
            for i in 0..n {
                g[i * n + i] = s;
            }
        });
        Self::new(grid, tensor)
    }

    /// `(y_n + 1)^{-2} δ`: `Ric = -(n-1) g`, `h = +1` on the lower sheet and
    /// `-1` on the upper one.
    pub fn hyperbolic_slab(grid: &GridManifold) -> Self {
        let u = ScalarField::from_fn(grid, |y| -(y[y.len() - 1] + 1.0).ln());
        Self::conformally_flat(grid, &u).expect("slab metric is valid")
    }

    /// `e^{2cy_n} dy_1² + e^{-2cy_n} dy_2² + dy_3² + … + dy_n²`:
    /// minimal sheets, `Ric = diag(0, 0, …, -2c²)`, `R = -2c²`.
    pub fn sol(grid: &GridManifold, rate: f64) -> Result<Self> {
        if !rate.is_finite() {
            return Err(Error::Parameter("Sol rate must be finite".into()));
        }
        let n = grid.n();
        let tensor = TensorField::from_fn(grid, |p, g| {
            let y = grid.coord(p, n - 1);
            for i in 0..n {
                g[i * n + i] = 1.0;
            }
            g[0] = (2.0 * rate * y).exp();
            g[n + 1] = (-2.0 * rate * y).exp();
        });
        Self::new(grid, tensor)
    }

    /// `(1 + y_n)^{-2κ}` times [`MetricField::sol`]. Conformal to Sol, so the
    /// boundary Yamabe invariant stays negative; `κ = 1/2, c = 1/2` makes
    /// `-A^t` lie in `Γ_3` at `t = 0` and in `Γ_2` at `t = 1/2`.
    pub fn warped_sol(grid: &GridManifold, rate: f64, warp: f64) -> Result<Self> {
        if !warp.is_finite() {
            return Err(Error::Parameter("warp exponent must be finite".into()));
        }
        let n = grid.n();
        let u = ScalarField::from_fn(grid, |y| -warp * (1.0 + y[n - 1]).ln());
        Self::sol(grid, rate)?.conformal(grid, &u)
    }

    /// `e^{2v} g`.
    pub fn conformal(&self, grid: &GridManifold, v: &ScalarField) -> Result<Self> {
        if v.len() != grid.len() || !v.all_finite() {
            return Err(Error::Shape("conformal factor must be finite with one value per node".into()));
        }
        Self::new(grid, self.tensor.scaled(&v.map(|x| (2.0 * x).exp())))
    }

    pub fn n(&self) -> usize {
        self.tensor.n()
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }

    pub fn node(&self, p: usize) -> &[f64] {
        self.tensor.node(p)
    }

    pub fn tensor(&self) -> &TensorField {
        &self.tensor
    }

    pub fn inverse(&self) -> TensorField {
        let n = self.n();
        let mut out = TensorField::zeros(n, self.len());
        for p in 0..self.len() {
            let inv = dense::inverse_spd(n, self.node(p)).expect("validated metric");
            out.node_mut(p).copy_from_slice(&inv);
        }
        out
    }
}

/// Values on one boundary sheet, indexed by tangential position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryField {
    pub sheet: Sheet,
    pub values: Vec<f64>,
}

impl BoundaryField {
    pub fn new(grid: &GridManifold, sheet: Sheet, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.sheet_len() {
            return Err(Error::Shape(format!(
                "boundary field has {} values, sheet has {} nodes",
                values.len(),
                grid.sheet_len()
            )));
        }
        Ok(Self { sheet, values })
    }

    pub fn constant(grid: &GridManifold, sheet: Sheet, c: f64) -> Self {
        Self { sheet, values: vec![c; grid.sheet_len()] }
    }

    /// Samples `f(y)` at the sheet's node coordinates.
    pub fn from_fn(grid: &GridManifold, sheet: Sheet, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = grid.sheet_nodes(sheet).into_iter().map(|p| f(&grid.coords(p))).collect();
        Self { sheet, values }
    }

    /// Value at a node of this sheet.
    pub fn at(&self, grid: &GridManifold, node: usize) -> f64 {
        self.values[grid.sheet_index(node)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn sup_diff(&self, other: &BoundaryField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Sorted eigenvalue vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenField {
    n: usize,
    values: Vec<f64>,
}

impl EigenField {
    pub fn new(n: usize, values: Vec<f64>) -> Self {
        Self { n, values }
    }

    pub fn node(&self, p: usize) -> &[f64] {
        &self.values[p * self.n..(p + 1) * self.n]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_diff(&self, other: &EigenField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn raw(&self) -> &[f64] {
        &self.values
    }
}
