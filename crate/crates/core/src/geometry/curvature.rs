use super::dense;
use super::field::{EigenField, MetricField, ScalarField, TensorField};
use crate::error::{Error, Result};
use crate::grid::GridManifold;

/// `Γ^l_{ij}` per node, stored as `[node][l][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffels {
    n: usize,
    data: Vec<f64>,
}

impl Christoffels {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, p: usize, l: usize, i: usize, j: usize) -> f64 {
        let n = self.n;
        self.data[((p * n + l) * n + i) * n + j]
    }

    /// All `n³` symbols of one node.
    pub fn node(&self, p: usize) -> &[f64] {
        let m = self.n * self.n * self.n;
        &self.data[p * m..(p + 1) * m]
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

fn check(g: &MetricField, grid: &GridManifold) -> Result<()> {
    if g.n() != grid.n() || g.len() != grid.len() {
        return Err(Error::Shape("metric does not match grid".into()));
    }
    Ok(())
}

pub fn christoffels(g: &MetricField, grid: &GridManifold) -> Result<Christoffels> {
    check(g, grid)?;
    let n = grid.n();
    let nn = n * n;
    let raw = g.tensor().raw();
    let mut data = vec![0.0; grid.len() * nn * n];
    let mut dg = vec![0.0; n * nn];
    for p in 0..grid.len() {
        let ginv = dense::inverse_spd(n, g.node(p)).ok_or(Error::Definiteness { node: p })?;
        // dg[m][i][j] = ∂_m g_ij
        for m in 0..n {
            let st = grid.d1(p, m);
            for q in 0..nn {
                dg[m * nn + q] = GridManifold::apply(&st, raw, nn, q);
            }
        }
        let out = &mut data[p * nn * n..(p + 1) * nn * n];
        for l in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += ginv[l * n + m]
                            * (dg[i * nn + j * n + m] + dg[j * nn + i * n + m] - dg[m * nn + i * n + j]);
                    }
                    out[l * nn + i * n + j] = 0.5 * s;
                    out[l * nn + j * n + i] = 0.5 * s;
                }
            }
        }
    }
    Ok(Christoffels { n, data })
}

/// Ricci tensor (symmetrized) and scalar curvature.
pub fn ricci_scalar(g: &MetricField, grid: &GridManifold) -> Result<(TensorField, ScalarField)> {
    let gamma = christoffels(g, grid)?;
    ricci_from_christoffels(g, grid, &gamma)
}

/// `R_ij = ∂_l Γ^l_ij - ∂_j Γ^l_il + Γ^l_lm Γ^m_ij - Γ^l_jm Γ^m_il`, with `∂Γ`
/// expanded through first and second differences of the metric so that the
/// boundary rows keep second-order accuracy.
pub fn ricci_from_christoffels(
    g: &MetricField,
    grid: &GridManifold,
    gamma: &Christoffels,
) -> Result<(TensorField, ScalarField)> {
    check(g, grid)?;
    let n = grid.n();
    let nn = n * n;
    let n3 = nn * n;
    let raw = g.tensor().raw();
    let mut ricci = TensorField::zeros(n, grid.len());
    let mut scalar = vec![0.0; grid.len()];
    let mut dg = vec![0.0; n3];
    let mut ddg = vec![0.0; nn * nn];
    let mut dgamma = vec![0.0; n * n3];
    let mut first = vec![0.0; n3];
    for p in 0..grid.len() {
        let ginv = dense::inverse_spd(n, g.node(p)).ok_or(Error::Definiteness { node: p })?;
        let gp = gamma.node(p);
        for a in 0..n {
            let st = grid.d1(p, a);
            for q in 0..nn {
                dg[a * nn + q] = GridManifold::apply(&st, raw, nn, q);
            }
            for b in a..n {
                let st = grid.d2(p, a, b);
                for q in 0..nn {
                    let x = GridManifold::apply(&st, raw, nn, q);
                    ddg[(a * n + b) * nn + q] = x;
                    ddg[(b * n + a) * nn + q] = x;
                }
            }
        }
        // first[m][i][j] = Γ_{m,ij}
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    first[m * nn + i * n + j] =
                        0.5 * (dg[i * nn + j * n + m] + dg[j * nn + i * n + m] - dg[m * nn + i * n + j]);
                }
            }
        }
        // dgamma[l][k][i][j] = ∂_l Γ^k_ij
        for l in 0..n {
            for k in 0..n {
                for i in 0..n {
                    for j in i..n {
                        let mut s = 0.0;
                        for m in 0..n {
                            let mut dinv = 0.0;
                            for a in 0..n {
                                for b in 0..n {
                                    dinv -= ginv[k * n + a] * dg[l * nn + a * n + b] * ginv[b * n + m];
                                }
                            }
                            let dfirst = 0.5
                                * (ddg[(l * n + i) * nn + j * n + m] + ddg[(l * n + j) * nn + i * n + m]
                                    - ddg[(l * n + m) * nn + i * n + j]);
                            s += dinv * first[m * nn + i * n + j] + ginv[k * n + m] * dfirst;
                        }
                        dgamma[l * n3 + k * nn + i * n + j] = s;
                        dgamma[l * n3 + k * nn + j * n + i] = s;
                    }
                }
            }
        }
        let r = ricci.node_mut(p);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += dgamma[l * n3 + l * nn + i * n + j] - dgamma[j * n3 + l * nn + i * n + l];
                    for m in 0..n {
                        s += gp[l * nn + l * n + m] * gp[m * nn + i * n + j]
                            - gp[l * nn + j * n + m] * gp[m * nn + i * n + l];
                    }
                }
                r[i * n + j] = s;
            }
        }
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (r[i * n + j] + r[j * n + i]);
                r[i * n + j] = m;
                r[j * n + i] = m;
            }
        }
        scalar[p] = dense::trace(n, &ginv, r);
    }
    Ok((ricci, ScalarField::new(scalar)))
}

pub fn check_t(t: f64) -> Result<()> {
    if !(t.is_finite() && t < 1.0) {
        return Err(Error::Parameter(format!("t = {t} violates the requirement t < 1")));
    }
    Ok(())
}

/// `A^t = (Ric - t R g / (2(n-1))) / (n-2)`.
pub fn schouten_t(ricci: &TensorField, scalar: &ScalarField, g: &MetricField, t: f64) -> Result<TensorField> {
    check_t(t)?;
    let n = g.n();
    if ricci.len() != g.len() || scalar.len() != g.len() {
        return Err(Error::Shape("curvature fields do not match metric".into()));
    }
    let nf = n as f64;
    let mut out = TensorField::zeros(n, g.len());
    for p in 0..g.len() {
        let c = t * scalar.values[p] / (2.0 * (nf - 1.0));
        let (r, gp) = (ricci.node(p), g.node(p));
        for (q, a) in out.node_mut(p).iter_mut().enumerate() {
            *a = (r[q] - c * gp[q]) / (nf - 2.0);
        }
    }
    Ok(out)
}

/// Sorted eigenvalues of `g⁻¹A` at every node.
pub fn rel_eigenvalues(a: &TensorField, g: &MetricField) -> Result<EigenField> {
    let n = g.n();
    if a.len() != g.len() || a.n() != n {
        return Err(Error::Shape("tensor does not match metric".into()));
    }
    let mut values = Vec::with_capacity(g.len() * n);
    for p in 0..g.len() {
        let v = dense::rel_eigenvalues(n, a.node(p), g.node(p)).ok_or(Error::Definiteness { node: p })?;
        values.extend_from_slice(&v);
    }
    Ok(EigenField::new(n, values))
}

#[derive(Debug, Clone)]
pub struct CurvatureBundle {
    pub christoffel: Christoffels,
    pub ricci: TensorField,
    pub scalar: ScalarField,
    pub schouten_t: TensorField,
    pub t: f64,
}

impl CurvatureBundle {
    pub fn compute(g: &MetricField, grid: &GridManifold, t: f64) -> Result<Self> {
        check_t(t)?;
        let christoffel = christoffels(g, grid)?;
        let (ricci, scalar) = ricci_from_christoffels(g, grid, &christoffel)?;
        let schouten_t = schouten_t(&ricci, &scalar, g, t)?;
        Ok(Self { christoffel, ricci, scalar, schouten_t, t })
    }
}
