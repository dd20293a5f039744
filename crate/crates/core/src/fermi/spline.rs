//! Tensor-product quintic spline interpolation of a nodal metric.
//!
//! Periodic axes use the cyclic interpolation system. The normal axis carries
//! two extra coefficients past each sheet, fixed by requiring the sixth
//! difference of the coefficient sequence to vanish at both ends, so the
//! interpolant reproduces quintics and is `O(h⁶)` accurate up to the sheets.

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};
use crate::geometry::MetricField;
use crate::grid::{GridManifold, MAX_DIM};

const DEGREE: usize = 5;
const SUPPORT: usize = DEGREE + 1;
const PAD: usize = 2;
/// Cardinal quintic B-spline at integer offsets `0, ±1, ±2`.
const KNOT_VALUES: [f64; 3] = [66.0 / 120.0, 26.0 / 120.0, 1.0 / 120.0];

/// Values and derivatives (in local units) of the six quintic B-splines
/// active at local offset `u` within a cell.
fn basis(u: f64) -> ([f64; SUPPORT], [f64; SUPPORT]) {
    let mut vals = [0.0; SUPPORT];
    vals[0] = 1.0;
    let mut der = [0.0; SUPPORT];
    for d in 1..=DEGREE {
        if d == DEGREE {
            for r in 0..=d {
                let left = if r > 0 { vals[r - 1] } else { 0.0 };
                let right = if r < d { vals[r] } else { 0.0 };
                der[r] = left - right;
            }
        }
        let df = d as f64;
        let mut next = [0.0; SUPPORT];
        for (r, x) in next.iter_mut().enumerate().take(d + 1) {
            let left = if r > 0 { vals[r - 1] } else { 0.0 };
            let right = if r < d { vals[r] } else { 0.0 };
            *x = (u + df - r as f64) / df * left + (r as f64 + 1.0 - u) / df * right;
        }
        vals = next;
    }
    (vals, der)
}

#[derive(Debug, Clone)]
struct Axis {
    periodic: bool,
    nodes: usize,
    spacing: f64,
    coefs: usize,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Axis {
    fn new(periodic: bool, nodes: usize, spacing: f64) -> Result<Self> {
        let coefs = if periodic { nodes } else { nodes + 2 * PAD };
        let mut a = DMatrix::zeros(coefs, coefs);
        if periodic {
            for i in 0..nodes {
                for off in -2isize..=2 {
                    let k = (i as isize + off).rem_euclid(nodes as isize) as usize;
                    a[(i, k)] += KNOT_VALUES[off.unsigned_abs()];
                }
            }
        } else {
            for i in 0..nodes {
                for off in -2isize..=2 {
                    a[(i, (i as isize + off + PAD as isize) as usize)] = KNOT_VALUES[off.unsigned_abs()];
                }
            }
            // Sixth differences: binomial(6, j) with alternating sign.
            let diff = [1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0];
            let starts = [0, 1, coefs - 7, coefs - 8];
            for (row, start) in (nodes..coefs).zip(starts) {
                for (j, w) in diff.iter().enumerate() {
                    a[(row, start + j)] = *w;
                }
            }
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(Error::Parameter(format!("spline system singular for {nodes} nodes")));
        }
        Ok(Self { periodic, nodes, spacing, coefs, lu })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = DVector::zeros(self.coefs);
        for (i, x) in rhs.iter().enumerate() {
            b[i] = *x;
        }
        self.lu.solve(&b).expect("invertible by construction").as_slice().to_vec()
    }

    /// First coefficient index and basis values/derivatives (per unit length).
    fn locate(&self, x: f64) -> (isize, [f64; SUPPORT], [f64; SUPPORT]) {
        let s = x / self.spacing;
        let cells = if self.periodic { self.nodes } else { self.nodes - 1 };
        let cell = if self.periodic { s.floor() } else { s.floor().clamp(0.0, cells as f64 - 1.0) };
        let (vals, mut der) = basis(s - cell);
        for d in der.iter_mut() {
            *d /= self.spacing;
        }
        let first = cell as isize - 2 + if self.periodic { 0 } else { PAD as isize };
        (first, vals, der)
    }

    fn index(&self, k: isize) -> usize {
        if self.periodic {
            k.rem_euclid(self.coefs as isize) as usize
        } else {
            k as usize
        }
    }
}

/// `C⁴` interpolant of a metric field, evaluable anywhere on the periodic
/// axes and on a neighbourhood of `[0,1]` along the normal axis (the boundary
/// cells are extended polynomially).
#[derive(Debug, Clone)]
pub struct MetricInterpolant {
    n: usize,
    axes: Vec<Axis>,
    /// Coefficients, row-major with the last axis fastest, components innermost.
    coefs: Vec<f64>,
    strides: Vec<usize>,
}

fn components(n: usize) -> Vec<(usize, usize)> {
    let mut out = vec![];
    for i in 0..n {
        for j in i..n {
            out.push((i, j));
        }
    }
    out
}

impl MetricInterpolant {
    pub fn new(grid: &GridManifold, g: &MetricField) -> Result<Self> {
        if g.len() != grid.len() || g.n() != grid.n() {
            return Err(Error::Shape("metric does not match grid".into()));
        }
        let n = grid.n();
        let axes =
            (0..n).map(|a| Axis::new(a + 1 < n, grid.shape()[a], grid.spacing()[a])).collect::<Result<Vec<_>>>()?;
        let comps = components(n);
        let nc = comps.len();

        let mut shape: Vec<usize> = grid.shape().to_vec();
        let mut data: Vec<f64> = Vec::with_capacity(grid.len() * nc);
        for p in 0..grid.len() {
            let gp = g.node(p);
            data.extend(comps.iter().map(|&(i, j)| gp[i * n + j]));
        }
        for (a, axis) in axes.iter().enumerate() {
            let outer: usize = shape[..a].iter().product();
            let inner: usize = shape[a + 1..].iter().product::<usize>() * nc;
            let mut new_shape = shape.clone();
            new_shape[a] = axis.coefs;
            let mut out = vec![0.0; outer * axis.coefs * inner];
            let mut line = vec![0.0; shape[a]];
            for o in 0..outer {
                for q in 0..inner {
                    for (k, x) in line.iter_mut().enumerate() {
                        *x = data[(o * shape[a] + k) * inner + q];
                    }
                    for (k, c) in axis.solve(&line).into_iter().enumerate() {
                        out[(o * axis.coefs + k) * inner + q] = c;
                    }
                }
            }
            data = out;
            shape = new_shape;
        }
        let mut strides = vec![nc; n];
        for a in (0..n - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        Ok(Self { n, axes, coefs: data, strides })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Metric `g` (`n×n`) and its first derivatives `dg[k·n² + i·n + j] = ∂_k g_ij` at `x`.
    pub fn eval(&self, x: &[f64], g: &mut [f64], dg: &mut [f64]) {
        let n = self.n;
        let nc = n * (n + 1) / 2;
        let mut first = [0isize; MAX_DIM];
        let mut vals = [[0.0; SUPPORT]; MAX_DIM];
        let mut ders = [[0.0; SUPPORT]; MAX_DIM];
        for a in 0..n {
            let (f, v, d) = self.axes[a].locate(x[a]);
            first[a] = f;
            vals[a] = v;
            ders[a] = d;
        }
        let mut acc = [0.0; 15];
        let mut dacc = [[0.0; 15]; MAX_DIM];
        let total = SUPPORT.pow(n as u32);
        let mut digits = [0usize; MAX_DIM];
        for _ in 0..total {
            let mut offset = 0;
            let mut w = 1.0;
            for a in 0..n {
                offset += self.axes[a].index(first[a] + digits[a] as isize) * self.strides[a];
                w *= vals[a][digits[a]];
            }
            let mut dw = [0.0; MAX_DIM];
            for (k, dwk) in dw.iter_mut().enumerate().take(n) {
                let mut prod = ders[k][digits[k]];
                for a in (0..n).filter(|&a| a != k) {
                    prod *= vals[a][digits[a]];
                }
                *dwk = prod;
            }
            let c = &self.coefs[offset..offset + nc];
            for q in 0..nc {
                acc[q] += w * c[q];
                for k in 0..n {
                    dacc[k][q] += dw[k] * c[q];
                }
            }
            for a in (0..n).rev() {
                digits[a] += 1;
                if digits[a] < SUPPORT {
                    break;
                }
                digits[a] = 0;
            }
        }
        for (q, (i, j)) in components(n).into_iter().enumerate() {
            g[i * n + j] = acc[q];
            g[j * n + i] = acc[q];
            for k in 0..n {
                dg[k * n * n + i * n + j] = dacc[k][q];
                dg[k * n * n + j * n + i] = dacc[k][q];
            }
        }
    }

    pub fn metric(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut g = vec![0.0; n * n];
        let mut dg = vec![0.0; n * n * n];
        self.eval(x, &mut g, &mut dg);
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScalarField;

    #[test]
    fn basis_is_a_partition_of_unity() {
        for u in [0.0, 0.25, 0.5, 0.9, -0.3, 1.4] {
            let (v, d) = basis(u);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(d.iter().sum::<f64>().abs() < 1e-14);
        }
        let (v, _) = basis(0.0);
        let expected = [KNOT_VALUES[2], KNOT_VALUES[1], KNOT_VALUES[0], KNOT_VALUES[1], KNOT_VALUES[2], 0.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn reproduces_nodes_and_quintics() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let u = ScalarField::from_fn(&grid, |y| 0.1 * (2.0 * std::f64::consts::PI * y[0]).sin() + 0.2 * y[2].powi(5));
        let g = MetricField::conformally_flat(&grid, &u).unwrap();
        let interp = MetricInterpolant::new(&grid, &g).unwrap();
        for p in 0..grid.len() {
            let x: Vec<f64> = grid.coords(p).to_vec();
            let gi = interp.metric(&x);
            for (a, b) in gi.iter().zip(g.node(p)) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        let flat = MetricField::flat(&grid);
        let mut tensor = flat.tensor().clone();
        for p in 0..grid.len() {
            let z = grid.coord(p, 2);
            tensor.node_mut(p)[8] = 1.0 + z.powi(5) - 0.5 * z.powi(3);
        }
        let q = MetricField::new(&grid, tensor).unwrap();
        let interp = MetricInterpolant::new(&grid, &q).unwrap();
        let (mut gv, mut dg) = (vec![0.0; 9], vec![0.0; 27]);
        for z in [0.0, 0.03, 0.51, 0.97, 1.0, -0.02, 1.02] {
            interp.eval(&[0.37, 0.81, z], &mut gv, &mut dg);
            assert!((gv[8] - (1.0 + z.powi(5) - 0.5 * z.powi(3))).abs() < 1e-11, "z={z}");
            assert!((dg[18 + 8] - (5.0 * z.powi(4) - 1.5 * z * z)).abs() < 1e-9, "z={z}");
            assert!((gv[0] - 1.0).abs() < 1e-13 && dg[8].abs() < 1e-12);
        }
    }

    #[test]
    fn slab_interpolation_error_is_high_order() {
        let err = |m: usize| {
            let grid = GridManifold::uniform(3, m).unwrap();
            let interp = MetricInterpolant::new(&grid, &MetricField::hyperbolic_slab(&grid)).unwrap();
            (0..200)
                .map(|i| {
                    let z = (i as f64 + 0.5) / 200.0;
                    (interp.metric(&[0.3, 0.6, z])[8] - (1.0 + z).powi(-2)).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(8), err(16));
        assert!(e2 < 5e-6, "{e2}");
        assert!(e1 / e2 > 25.0, "{e1} {e2}");
    }
}
