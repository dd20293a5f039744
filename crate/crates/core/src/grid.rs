//! Structured grid over `T^{n-1} x [0,1]`.
//!
//! Axes `0..n-1` are periodic; the last axis is the normal direction and
//! carries both boundary sheets. Nodes are stored row-major with the normal
//! axis fastest.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Finite-difference stencil as `(node, weight)` pairs.
pub type Stencil = SmallVec<[(usize, f64); 8]>;

pub type Coords = SmallVec<[f64; 5]>;

pub const MIN_NODES_PER_AXIS: usize = 8;
pub const MAX_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sheet {
    Lower,
    Upper,
}

impl Sheet {
    pub const BOTH: [Sheet; 2] = [Sheet::Lower, Sheet::Upper];

    /// Sign of the outward normal along the normal axis.
    pub fn outward_sign(self) -> f64 {
        match self {
            Sheet::Lower => -1.0,
            Sheet::Upper => 1.0,
        }
    }
}

/// A pair of values, one per boundary sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sheets<T> {
    pub lower: T,
    pub upper: T,
}

impl<T> Sheets<T> {
    pub fn new(lower: T, upper: T) -> Self {
        Self { lower, upper }
    }

    pub fn from_fn(mut f: impl FnMut(Sheet) -> T) -> Self {
        Self { lower: f(Sheet::Lower), upper: f(Sheet::Upper) }
    }

    pub fn get(&self, sheet: Sheet) -> &T {
        match sheet {
            Sheet::Lower => &self.lower,
            Sheet::Upper => &self.upper,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Sheets<U> {
        Sheets { lower: f(&self.lower), upper: f(&self.upper) }
    }
}

impl<T> std::ops::Index<Sheet> for Sheets<T> {
    type Output = T;
    fn index(&self, sheet: Sheet) -> &T {
        self.get(sheet)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridManifold {
    n: usize,
    shape: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl GridManifold {
    /// `shape` lists node counts per axis; `periods` the lengths of the
    /// `n-1` periodic axes. The normal axis always spans `[0,1]`.
    pub fn new(shape: Vec<usize>, periods: Vec<f64>) -> Result<Self> {
        let n = shape.len();
        if !(3..=MAX_DIM).contains(&n) {
            return Err(Error::Shape(format!("dimension {n} outside 3..={MAX_DIM}")));
        }
        if periods.len() != n - 1 {
            return Err(Error::Shape(format!("expected {} tangential periods, got {}", n - 1, periods.len())));
        }
        if let Some(&m) = shape.iter().find(|&&m| m < MIN_NODES_PER_AXIS) {
            return Err(Error::Shape(format!("axis with {m} nodes; at least {MIN_NODES_PER_AXIS} required")));
        }
        if periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Shape("tangential periods must be positive".into()));
        }
        let mut spacing: Vec<f64> = periods.iter().zip(&shape).map(|(p, &m)| p / m as f64).collect();
        spacing.push(1.0 / (shape[n - 1] - 1) as f64);
        let mut strides = vec![1usize; n];
        for a in (0..n - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        let len = shape.iter().try_fold(1usize, |acc, &m| acc.checked_mul(m));
        let len = len.ok_or_else(|| Error::Shape("grid too large".into()))?;
        Ok(Self { n, shape, spacing, strides, len })
    }

    /// Isotropic grid with mesh width `1/cells` on every axis and unit periods.
    pub fn uniform(n: usize, cells: usize) -> Result<Self> {
        if !(3..=MAX_DIM).contains(&n) {
            return Err(Error::Shape(format!("dimension {n} outside 3..={MAX_DIM}")));
        }
        let mut shape = vec![cells; n];
        shape[n - 1] = cells + 1;
        Self::new(shape, vec![1.0; n - 1])
    }

    /// Grid with every mesh width halved.
    pub fn refined(&self) -> Result<Self> {
        let mut shape: Vec<usize> = self.shape.iter().map(|m| 2 * m).collect();
        shape[self.n - 1] = 2 * (self.shape[self.n - 1] - 1) + 1;
        Self::new(shape, self.periods())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Largest mesh width.
    pub fn h(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn periods(&self) -> Vec<f64> {
        (0..self.n - 1).map(|a| self.spacing[a] * self.shape[a] as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn normal_axis(&self) -> usize {
        self.n - 1
    }

    pub fn normal_nodes(&self) -> usize {
        self.shape[self.n - 1]
    }

    /// Number of nodes on one boundary sheet.
    pub fn sheet_len(&self) -> usize {
        self.len / self.normal_nodes()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, node: usize) -> SmallVec<[usize; 5]> {
        let mut out = SmallVec::new();
        let mut rest = node;
        for a in 0..self.n {
            out.push(rest / self.strides[a]);
            rest %= self.strides[a];
        }
        out
    }

    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.shape[axis]
    }

    pub fn normal_index(&self, node: usize) -> usize {
        node % self.shape[self.n - 1]
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        self.axis_index(node, axis) as f64 * self.spacing[axis]
    }

    pub fn coords(&self, node: usize) -> Coords {
        (0..self.n).map(|a| self.coord(node, a)).collect()
    }

    pub fn sheet_of(&self, node: usize) -> Option<Sheet> {
        let k = self.normal_index(node);
        if k == 0 {
            Some(Sheet::Lower)
        } else if k + 1 == self.normal_nodes() {
            Some(Sheet::Upper)
        } else {
            None
        }
    }

    /// Coordinate depth of a node below the given sheet.
    pub fn depth(&self, node: usize, sheet: Sheet) -> f64 {
        let y = self.coord(node, self.n - 1);
        match sheet {
            Sheet::Lower => y,
            Sheet::Upper => 1.0 - y,
        }
    }

    /// Nodes of a sheet in increasing index order; position `j` in the
    /// returned list is the sheet-local index used by boundary fields.
    pub fn sheet_nodes(&self, sheet: Sheet) -> Vec<usize> {
        let m = self.normal_nodes();
        let k = match sheet {
            Sheet::Lower => 0,
            Sheet::Upper => m - 1,
        };
        (0..self.sheet_len()).map(|j| j * m + k).collect()
    }

    /// Sheet-local index of a node (its tangential position).
    pub fn sheet_index(&self, node: usize) -> usize {
        node / self.normal_nodes()
    }

    /// Neighbour along an axis; tangential axes wrap, the normal axis must
    /// stay in range.
    pub fn offset(&self, node: usize, axis: usize, delta: isize) -> usize {
        let i = self.axis_index(node, axis) as isize;
        let m = self.shape[axis] as isize;
        let j = if axis + 1 == self.n {
            debug_assert!((0..m).contains(&(i + delta)));
            i + delta
        } else {
            (i + delta).rem_euclid(m)
        };
        (node as isize + (j - i) * self.strides[axis] as isize) as usize
    }

    /// Second-order first-derivative stencil; one-sided on the boundary rows.
    pub fn d1(&self, node: usize, axis: usize) -> Stencil {
        let h = self.spacing[axis];
        let mut st = Stencil::new();
        if axis + 1 == self.n {
            let k = self.normal_index(node);
            let last = self.normal_nodes() - 1;
            if k == 0 {
                st.push((node, -1.5 / h));
                st.push((self.offset(node, axis, 1), 2.0 / h));
                st.push((self.offset(node, axis, 2), -0.5 / h));
                return st;
            }
            if k == last {
                st.push((node, 1.5 / h));
                st.push((self.offset(node, axis, -1), -2.0 / h));
                st.push((self.offset(node, axis, -2), 0.5 / h));
                return st;
            }
        }
        st.push((self.offset(node, axis, -1), -0.5 / h));
        st.push((self.offset(node, axis, 1), 0.5 / h));
        st
    }

    /// Second-order second-derivative stencil. Mixed derivatives are the
    /// tensor product of the two first-derivative stencils.
    pub fn d2(&self, node: usize, a: usize, b: usize) -> Stencil {
        let mut st = Stencil::new();
        if a != b {
            for (p, wa) in self.d1(node, a) {
                for (q, wb) in self.d1(p, b) {
                    st.push((q, wa * wb));
                }
            }
            return st;
        }
        let h2 = self.spacing[a] * self.spacing[a];
        if a + 1 == self.n {
            let k = self.normal_index(node);
            let last = self.normal_nodes() - 1;
            if k == 0 || k == last {
                let dir = if k == 0 { 1 } else { -1 };
                for (j, w) in [2.0, -5.0, 4.0, -1.0].into_iter().enumerate() {
                    st.push((self.offset(node, a, dir * j as isize), w / h2));
                }
                return st;
            }
        }
        st.push((self.offset(node, a, -1), 1.0 / h2));
        st.push((node, -2.0 / h2));
        st.push((self.offset(node, a, 1), 1.0 / h2));
        st
    }

    /// Applies a stencil to component `comp` of a field with `ncomp`
    /// interleaved components per node.
    pub fn apply(st: &Stencil, data: &[f64], ncomp: usize, comp: usize) -> f64 {
        st.iter().map(|&(p, w)| w * data[p * ncomp + comp]).sum()
    }

    /// Linear interpolation from the next coarser nested grid.
    pub fn prolong(coarse: &GridManifold, fine: &GridManifold, values: &[f64]) -> Result<Vec<f64>> {
        let expected = coarse.refined()?;
        if expected.shape != fine.shape || values.len() != coarse.len {
            return Err(Error::Shape("grids are not nested by one refinement".into()));
        }
        let n = fine.n;
        let mut out = vec![0.0; fine.len];
        let mut corner = vec![0usize; n];
        for (node, slot) in out.iter_mut().enumerate() {
            let multi = fine.multi_index(node);
            let mut acc = 0.0;
            for mask in 0..(1usize << n) {
                let mut weight = 1.0;
                let mut skip = false;
                for a in 0..n {
                    let half = multi[a] / 2;
                    let odd = multi[a] % 2 == 1;
                    let up = mask >> a & 1 == 1;
                    if !odd && up {
                        skip = true;
                        break;
                    }
                    if odd {
                        weight *= 0.5;
                    }
                    corner[a] = match (up, a + 1 == n) {
                        (false, _) => half,
                        (true, true) => half + 1,
                        (true, false) => (half + 1) % coarse.shape[a],
                    };
                }
                if skip {
                    continue;
                }
                acc += weight * values[coarse.index(&corner)];
            }
            *slot = acc;
        }
        Ok(out)
    }
}
