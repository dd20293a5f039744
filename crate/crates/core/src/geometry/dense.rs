//! Small dense kernels for per-node `n x n` symmetric matrices.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use smallvec::SmallVec;

pub type Vals = SmallVec<[f64; 5]>;

pub fn matrix(n: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, &data[..n * n])
}

/// Lower Cholesky factor, or `None` when `g` is not positive definite.
pub fn cholesky(n: usize, g: &[f64]) -> Option<DMatrix<f64>> {
    let m = matrix(n, g);
    if m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Cholesky::new(m).map(|c| c.l())
}

pub fn inverse_spd(n: usize, g: &[f64]) -> Option<Vec<f64>> {
    let m = matrix(n, g);
    let inv = Cholesky::new(m)?.inverse();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
        }
    }
    Some(out)
}

/// Eigen-decomposition of the pencil `(A, g)`.
#[derive(Debug, Clone)]
pub struct RelEigen {
    /// Ascending eigenvalues of `g⁻¹A`.
    pub values: Vals,
    /// Columns are `g`-orthonormal eigenvectors: `PᵀgP = I`, `PᵀAP = Λ`.
    pub frame: DMatrix<f64>,
}

pub fn rel_eigen(n: usize, a: &[f64], g: &[f64]) -> Option<RelEigen> {
    let l = cholesky(n, g)?;
    let am = matrix(n, a);
    let x = l.solve_lower_triangular(&am)?;
    let mut b = l.solve_lower_triangular(&x.transpose())?;
    b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let q = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let frame = l.transpose().solve_upper_triangular(&q)?;
    Some(RelEigen { values, frame })
}

pub fn rel_eigenvalues(n: usize, a: &[f64], g: &[f64]) -> Option<Vals> {
    let l = cholesky(n, g)?;
    let am = matrix(n, a);
    let x = l.solve_lower_triangular(&am)?;
    let mut b = l.solve_lower_triangular(&x.transpose())?;
    b = (&b + b.transpose()) * 0.5;
    let mut values: Vals = SymmetricEigen::new(b).eigenvalues.iter().cloned().collect();
    values.sort_by(f64::total_cmp);
    Some(values)
}

/// `tr(g⁻¹A)` given the inverse metric.
pub fn trace(n: usize, ginv: &[f64], a: &[f64]) -> f64 {
    (0..n * n).map(|q| ginv[q] * a[q]).sum()
}
