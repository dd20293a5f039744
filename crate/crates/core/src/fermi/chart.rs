//! Boundary charts: geodesic normal coordinates on a sheet, extended inward
//! along unit-speed normal geodesics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::geodesic::{flow, norm, quad, rk4_step, steps_for, SheetMetric};
use super::spline::MetricInterpolant;
use crate::error::{Error, Result};
use crate::geometry::{dense, MetricField};
use crate::grid::{GridManifold, Sheet};

/// Largest admissible chart radius (slab thickness is 1).
pub const MAX_RADIUS: f64 = 0.125;
pub const FOOT_TOL: f64 = 1e-10;
pub const FOOT_MAX_ITERS: usize = 100;
/// Stencil half-width, in sample spacings, along each chart axis.
pub const STENCIL: i32 = 2;
pub const CONTAINMENT_SAMPLES: usize = 500;
pub const CONTAINMENT_SEED: u64 = 0x5eed_f3a1;

#[derive(Debug, Clone, Serialize)]
pub struct ChartSample {
    /// `(y_1, …, y_n)`.
    pub chart: Vec<f64>,
    pub ambient: Vec<f64>,
    /// `g(∂/∂y_i, ∂/∂y_j)`, row-major.
    pub metric: Vec<f64>,
    /// Foot point on the sheet, tangential coordinates.
    pub foot: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FermiChart {
    pub sheet: Sheet,
    /// Ambient coordinates of `y₀`.
    pub base: Vec<f64>,
    pub radius: f64,
    /// Orthonormal frame of the sheet at `y₀` in tangential coordinates.
    pub frame: Vec<Vec<f64>>,
    /// Inward unit normal at `y₀`.
    pub inward: Vec<f64>,
    /// Difference step used for the tangential chart vectors.
    pub fd_step: f64,
    pub samples: Vec<ChartSample>,
    /// Largest chart-coordinate error when inverting the samples.
    pub inverse_defect: f64,
    pub max_foot_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChartReport {
    pub radius: f64,
    pub samples: usize,
    /// `max |g(∂/∂y_j, ∂/∂y_n)|`, `j < n`.
    pub orthogonality_defect: f64,
    /// `max |∂/∂y_n - N|_g`, `N` the unit normal of the level sets of `y_n`.
    pub normal_deviation: f64,
    /// `max |g(∂/∂y_i, ∂/∂y_j)(y₀) - δ_ij|`.
    pub base_metric_defect: f64,
    /// `max |y_n - d(·, sheet)|`.
    pub distance_defect: f64,
    /// Smallest separation of foot points of samples with distinct tangential coordinates.
    pub min_foot_separation: f64,
    pub inverse_defect: f64,
    pub containment_samples: usize,
    pub containment_violations: usize,
    /// Largest `d(y₀, y) / (radius/8)` over the containment samples.
    pub max_containment_ratio: f64,
}

pub(crate) struct ChartMap {
    interp: MetricInterpolant,
    periods: Vec<f64>,
    sheet: Sheet,
    base: Vec<f64>,
    frame: Vec<Vec<f64>>,
    max_step: f64,
}

fn level(sheet: Sheet) -> f64 {
    match sheet {
        Sheet::Lower => 0.0,
        Sheet::Upper => 1.0,
    }
}

fn inward_sign(sheet: Sheet) -> f64 {
    -sheet.outward_sign()
}

impl ChartMap {
    pub(crate) fn new(grid: &GridManifold, g: &MetricField, base: &[f64]) -> Result<Self> {
        let n = grid.n();
        if base.len() != n || base.iter().any(|x| !x.is_finite()) {
            return Err(Error::Shape(format!("base point needs {n} finite coordinates")));
        }
        let sheet = if base[n - 1] == 0.0 {
            Sheet::Lower
        } else if base[n - 1] == 1.0 {
            Sheet::Upper
        } else {
            return Err(Error::Domain(format!("base point has y_n = {}, not on a sheet", base[n - 1])));
        };
        let interp = MetricInterpolant::new(grid, g)?;
        let d = n - 1;
        let mut gb = vec![0.0; n * n];
        let mut dg = vec![0.0; n * n * n];
        interp.eval(base, &mut gb, &mut dg);
        let gs: Vec<f64> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| gb[i * n + j]).collect();
        let frame = gram_schmidt(d, &gs)?;
        Ok(Self { interp, periods: grid.periods(), sheet, base: base.to_vec(), frame, max_step: grid.h() / 4.0 })
    }

    fn n(&self) -> usize {
        self.base.len()
    }

    fn sheet_metric(&self) -> SheetMetric<'_> {
        SheetMetric { ambient: &self.interp, level: level(self.sheet) }
    }

    /// Inward unit normal `-ν` at an ambient point of the sheet.
    fn inward_normal(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let ginv = dense::inverse_spd(n, &self.interp.metric(y))
            .ok_or_else(|| Error::Chart("metric lost definiteness".into()))?;
        let scale = inward_sign(self.sheet) / ginv[(n - 1) * n + n - 1].sqrt();
        Ok((0..n).map(|j| scale * ginv[(n - 1) * n + j]).collect())
    }

    /// Foot point `exp_{y₀}(Σ ξ_j e_j)` on the sheet, ambient coordinates.
    fn foot(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let d = n - 1;
        let v: Vec<f64> = (0..d).map(|i| (0..d).map(|j| xi[j] * self.frame[j][i]).sum()).collect();
        let len = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sm = self.sheet_metric();
        let (mut p, _) = flow(&sm, &self.base[..d], &v, 1.0, steps_for(len, self.max_step))?;
        p.push(level(self.sheet));
        Ok(p)
    }

    /// Ambient point and `∂/∂y_n` at chart coordinates `c`.
    pub(crate) fn forward(&self, c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let foot = self.foot(&c[..n - 1])?;
        let dir = self.inward_normal(&foot)?;
        let r = c[n - 1];
        flow(&self.interp, &foot, &dir, r, steps_for(r, self.max_step))
    }

    fn wrapped_diff(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| {
                let d = x - y;
                match self.periods.get(i) {
                    Some(p) => d - p * (d / p).round(),
                    None => d,
                }
            })
            .collect()
    }

    /// Chart vectors `∂/∂y_j` as columns (`jac[i·n + j] = ∂x^i/∂y_j`): centred
    /// differences of step `step` for tangential `j`, the geodesic velocity for `j = n`.
    fn jacobian(&self, c: &[f64], step: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let (x, vel) = self.forward(c)?;
        let mut jac = vec![0.0; n * n];
        for j in 0..n - 1 {
            let mut cp = c.to_vec();
            let mut cm = c.to_vec();
            cp[j] += step;
            cm[j] -= step;
            let diff = self.wrapped_diff(&self.forward(&cp)?.0, &self.forward(&cm)?.0);
            for i in 0..n {
                jac[i * n + j] = diff[i] / (2.0 * step);
            }
        }
        for i in 0..n {
            jac[i * n + n - 1] = vel[i];
        }
        Ok((x, jac))
    }

    /// Chart-frame metric `Jᵀ g J` at `c`.
    fn chart_metric(&self, c: &[f64], step: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let (x, jac) = self.jacobian(c, step)?;
        let g = self.interp.metric(&x);
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        s += jac[i * n + a] * g[i * n + j] * jac[j * n + b];
                    }
                }
                out[a * n + b] = s;
            }
        }
        Ok((x, out))
    }

    /// Foot-point search: damped Newton on `(ξ, y_n)` with `y_n ≥ 0`,
    /// returning the chart coordinates of `x` and the iteration count.
    pub(crate) fn inverse(&self, x: &[f64], guess: &[f64]) -> Result<(Vec<f64>, usize)> {
        let n = self.n();
        let residual = |c: &[f64]| -> Result<Vec<f64>> { Ok(self.wrapped_diff(&self.forward(c)?.0, x)) };
        let size = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut c = guess.to_vec();
        c[n - 1] = c[n - 1].max(0.0);
        let mut r = residual(&c)?;
        for iter in 0..=FOOT_MAX_ITERS {
            if size(&r) <= FOOT_TOL {
                return Ok((c, iter));
            }
            if iter == FOOT_MAX_ITERS {
                break;
            }
            let eps = 1e-6;
            let mut jac = nalgebra::DMatrix::zeros(n, n);
            for j in 0..n {
                let mut cp = c.clone();
                let mut cm = c.clone();
                cp[j] += eps;
                cm[j] -= eps;
                let d = self.wrapped_diff(&self.forward(&cp)?.0, &self.forward(&cm)?.0);
                for i in 0..n {
                    jac[(i, j)] = d[i] / (2.0 * eps);
                }
            }
            let rhs = nalgebra::DVector::from_column_slice(&r);
            let delta = jac.lu().solve(&rhs).ok_or_else(|| Error::Chart("singular chart Jacobian".into()))?;
            let mut lambda = 1.0;
            loop {
                let mut trial: Vec<f64> = c.iter().zip(delta.iter()).map(|(a, b)| a - lambda * b).collect();
                trial[n - 1] = trial[n - 1].max(0.0);
                let rt = residual(&trial)?;
                if size(&rt) < size(&r) {
                    c = trial;
                    r = rt;
                    break;
                }
                lambda *= 0.5;
                if lambda < 1e-6 {
                    return Err(Error::Chart(format!("foot-point search stalled at residual {:.3e}", size(&r))));
                }
            }
        }
        Err(Error::Chart(format!("foot-point search did not converge in {FOOT_MAX_ITERS} iterations")))
    }

    /// Crude chart coordinates from ambient coordinate offsets.
    fn guess(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let d = n - 1;
        let off = self.wrapped_diff(x, &self.base);
        let f = nalgebra::DMatrix::from_fn(d, d, |i, j| self.frame[j][i]);
        let xi = f
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(&off[..d]))
            .map(|v| v.as_slice().to_vec())
            .unwrap_or_else(|| vec![0.0; d]);
        let gb = self.interp.metric(&self.base);
        let mut c = xi;
        c.push(off[d].abs() * gb[n * n - 1].sqrt());
        c
    }

    /// `d(x, sheet)` as the shortest unit-speed geodesic from `x` that
    /// reaches the sheet, minimised over initial directions.
    pub(crate) fn distance_to_sheet(&self, x: &[f64]) -> Result<f64> {
        let n = self.n();
        let d = n - 1;
        let lev = level(self.sheet);
        if (x[d] - lev).abs() <= 1e-14 {
            return Ok(0.0);
        }
        let g = self.interp.metric(x);
        // Frame at x whose last vector points toward the sheet.
        let ginv = dense::inverse_spd(n, &g).ok_or_else(|| Error::Chart("metric lost definiteness".into()))?;
        let toward: Vec<f64> = (0..n).map(|j| -inward_sign(self.sheet) * ginv[d * n + j]).collect();
        let mut basis: Vec<Vec<f64>> = vec![toward];
        for a in 0..d {
            basis.push((0..n).map(|i| if i == a { 1.0 } else { 0.0 }).collect());
        }
        let frame = orthonormalize(n, &g, basis)?;
        let hit = |theta: &[f64]| -> Result<f64> {
            let t = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
            let sinc = if t < 1e-8 { 1.0 - t * t / 6.0 } else { t.sin() / t };
            let dir: Vec<f64> = (0..n)
                .map(|i| t.cos() * frame[0][i] + sinc * (0..d).map(|a| theta[a] * frame[a + 1][i]).sum::<f64>())
                .collect();
            self.hitting_length(x, &dir)
        };
        let mut theta = vec![0.0; d];
        let mut best = hit(&theta)?;
        let eps = 1e-4;
        for _ in 0..30 {
            let mut grad = vec![0.0; d];
            let mut hess = nalgebra::DMatrix::zeros(d, d);
            for a in 0..d {
                let mut p = theta.clone();
                let mut m = theta.clone();
                p[a] += eps;
                m[a] -= eps;
                let (lp, lm) = (hit(&p)?, hit(&m)?);
                grad[a] = (lp - lm) / (2.0 * eps);
                hess[(a, a)] = (lp - 2.0 * best + lm) / (eps * eps);
                for b in 0..a {
                    let mut pp = theta.clone();
                    let mut pm = theta.clone();
                    let mut mp = theta.clone();
                    let mut mm = theta.clone();
                    pp[a] += eps;
                    pp[b] += eps;
                    pm[a] += eps;
                    pm[b] -= eps;
                    mp[a] -= eps;
                    mp[b] += eps;
                    mm[a] -= eps;
                    mm[b] -= eps;
                    let v = (hit(&pp)? - hit(&pm)? - hit(&mp)? + hit(&mm)?) / (4.0 * eps * eps);
                    hess[(a, b)] = v;
                    hess[(b, a)] = v;
                }
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&nalgebra::DVector::from_column_slice(&grad)).as_slice().to_vec(),
                None => grad.iter().map(|g| g * 1e-2).collect(),
            };
            let mut lambda = 1.0;
            let mut moved = false;
            while lambda > 1e-4 {
                let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t - lambda * s).collect();
                let lt = hit(&trial)?;
                if lt <= best {
                    theta = trial;
                    best = lt;
                    moved = true;
                    break;
                }
                lambda *= 0.5;
            }
            let size = step.iter().fold(0.0f64, |m, s| m.max(s.abs())) * lambda;
            if !moved || size < 1e-9 {
                break;
            }
        }
        Ok(best)
    }

    /// Arc length at which the geodesic from `x` along unit `dir` meets the sheet.
    fn hitting_length(&self, x: &[f64], dir: &[f64]) -> Result<f64> {
        let n = self.n();
        let lev = level(self.sheet);
        let side = |y: &[f64]| inward_sign(self.sheet) * (y[n - 1] - lev);
        let dt = self.max_step;
        let limit = 2.0;
        let (mut p, mut v) = (x.to_vec(), dir.to_vec());
        let mut travelled = 0.0;
        loop {
            let (q, w) = rk4_step(&self.interp, &p, &v, dt)?;
            if side(&q) <= 0.0 {
                // Secant on the partial step length.
                let (mut a, mut fa) = (0.0, side(&p));
                let (mut b, mut fb) = (dt, side(&q));
                for _ in 0..60 {
                    let tau = if fb != fa { b - fb * (b - a) / (fb - fa) } else { 0.5 * (a + b) };
                    let tau = tau.clamp(a.min(b), a.max(b));
                    let ft = side(&rk4_step(&self.interp, &p, &v, tau)?.0);
                    if ft.abs() < 1e-15 || (b - a).abs() < 1e-16 {
                        return Ok(travelled + tau);
                    }
                    if ft > 0.0 {
                        a = tau;
                        fa = ft;
                    } else {
                        b = tau;
                        fb = ft;
                    }
                }
                return Ok(travelled + 0.5 * (a + b));
            }
            p = q;
            v = w;
            travelled += dt;
            if travelled > limit {
                return Ok(f64::INFINITY);
            }
        }
    }

    /// Geodesic distance from `y₀` to `x` by shooting; falls back to the
    /// length of the broken path (sheet geodesic, then normal segment) when
    /// the connecting geodesic leaves the domain.
    fn distance_from_base(&self, x: &[f64], chart: &[f64]) -> Result<f64> {
        let n = self.n();
        let broken = chart[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt() + chart[n - 1];
        let steps = 8;
        let end = |v: &[f64]| -> Result<Vec<f64>> {
            Ok(self.wrapped_diff(&flow(&self.interp, &self.base, v, 1.0, steps)?.0, x))
        };
        let mut v = self.wrapped_diff(x, &self.base);
        let mut converged = false;
        for _ in 0..30 {
            let r = end(&v)?;
            if r.iter().all(|e| e.abs() < 1e-13) {
                converged = true;
                break;
            }
            let mut jac = nalgebra::DMatrix::zeros(n, n);
            for j in 0..n {
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[j] += 1e-7;
                vm[j] -= 1e-7;
                let dd = self.wrapped_diff(&end(&vp)?, &end(&vm)?);
                for i in 0..n {
                    jac[(i, j)] = dd[i] / 2e-7;
                }
            }
            let Some(delta) = jac.lu().solve(&nalgebra::DVector::from_column_slice(&r)) else { break };
            for (a, b) in v.iter_mut().zip(delta.iter()) {
                *a -= b;
            }
        }
        if !converged {
            return Ok(broken);
        }
        // The geodesic must stay in M to bound the intrinsic distance.
        let lev = level(self.sheet);
        let dt = 1.0 / steps as f64;
        let (mut p, mut w) = (self.base.clone(), v.clone());
        for _ in 0..steps {
            (p, w) = rk4_step(&self.interp, &p, &w, dt)?;
            if inward_sign(self.sheet) * (p[n - 1] - lev) < -1e-12 {
                return Ok(broken);
            }
        }
        Ok(norm(&self.interp, &self.base, &v).min(broken))
    }
}

/// Gram-Schmidt of the coordinate basis against `g` (`d×d`).
fn gram_schmidt(d: usize, g: &[f64]) -> Result<Vec<Vec<f64>>> {
    let basis = (0..d).map(|a| (0..d).map(|i| if i == a { 1.0 } else { 0.0 }).collect()).collect();
    orthonormalize(d, g, basis)
}

fn orthonormalize(d: usize, g: &[f64], basis: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = vec![];
    for mut v in basis {
        for _ in 0..2 {
            for e in &out {
                let c = quad(d, g, &v, e);
                for (x, y) in v.iter_mut().zip(e) {
                    *x -= c * y;
                }
            }
        }
        let len = quad(d, g, &v, &v).sqrt();
        if !(len > 1e-12) {
            return Err(Error::Chart("degenerate frame".into()));
        }
        out.push(v.into_iter().map(|x| x / len).collect());
    }
    Ok(out)
}

/// Chart at the sheet point `base` (ambient coordinates, `y_n ∈ {0, 1}`).
/// Samples sit on a stencil of spacing `radius/8` in chart coordinates; each
/// is mapped forward and recovered by the foot-point search.
pub fn build_chart(grid: &GridManifold, g: &MetricField, base: &[f64], radius: f64) -> Result<FermiChart> {
    if !(radius > 0.0 && radius <= MAX_RADIUS) {
        return Err(Error::Parameter(format!("chart radius must lie in (0, {MAX_RADIUS}], got {radius}")));
    }
    let map = ChartMap::new(grid, g, base)?;
    let n = grid.n();
    let spacing = radius / 8.0;
    let fd_step = grid.h();
    let mut samples = vec![];
    let mut inverse_defect: f64 = 0.0;
    let mut max_iters = 0;
    for offsets in stencil(n - 1) {
        for k in 0..=STENCIL {
            let mut c: Vec<f64> = offsets.iter().map(|o| *o as f64 * spacing).collect();
            c.push(k as f64 * spacing);
            let (x, metric) = map.chart_metric(&c, fd_step)?;
            if !(0.0..=1.0).contains(&x[n - 1]) {
                return Err(Error::Chart(format!("sample {c:?} left the slab")));
            }
            let (back, iters) = map.inverse(&x, &map.guess(&x))?;
            inverse_defect = inverse_defect.max(back.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            max_iters = max_iters.max(iters);
            let foot = map.foot(&c[..n - 1])?[..n - 1].to_vec();
            samples.push(ChartSample { chart: c, ambient: x, metric, foot });
        }
    }
    let inward = map.inward_normal(base)?;
    Ok(FermiChart {
        sheet: map.sheet,
        base: base.to_vec(),
        radius,
        frame: map.frame.clone(),
        inward,
        fd_step,
        samples,
        inverse_defect,
        max_foot_iterations: max_iters,
    })
}

/// Integer offsets in `Z^d` with L¹ norm at most [`STENCIL`].
fn stencil(d: usize) -> Vec<Vec<i32>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<i32>| {
                (-STENCIL..=STENCIL).map(move |o| {
                    let mut p = prefix.clone();
                    p.push(o);
                    p
                })
            })
            .collect();
    }
    out.retain(|p| p.iter().map(|o| o.abs()).sum::<i32>() <= STENCIL);
    out
}

pub fn validate_chart(chart: &FermiChart, grid: &GridManifold, g: &MetricField) -> Result<ChartReport> {
    validate_chart_with(chart, grid, g, CONTAINMENT_SAMPLES, CONTAINMENT_SEED)
}

/// Checks the chart identities on its samples and the half-ball containment
/// on `containment` random chart points of norm below `radius/16`.
pub fn validate_chart_with(
    chart: &FermiChart,
    grid: &GridManifold,
    g: &MetricField,
    containment: usize,
    seed: u64,
) -> Result<ChartReport> {
    let map = ChartMap::new(grid, g, &chart.base)?;
    let n = grid.n();
    let last = n - 1;

    let mut orthogonality: f64 = 0.0;
    let mut normal: f64 = 0.0;
    let mut distance: f64 = 0.0;
    for s in &chart.samples {
        let m = &s.metric;
        for j in 0..last {
            orthogonality = orthogonality.max(m[j * n + last].abs());
        }
        let minv = dense::inverse_spd(n, m).ok_or_else(|| Error::Chart("degenerate chart metric".into()))?;
        let scale = minv[last * n + last].sqrt();
        let diff: Vec<f64> = (0..n).map(|i| if i == last { 1.0 } else { 0.0 } - minv[i * n + last] / scale).collect();
        normal = normal.max(quad(n, m, &diff, &diff).max(0.0).sqrt());
        distance = distance.max((s.chart[last] - map.distance_to_sheet(&s.ambient)?).abs());
    }

    let gb = map.interp.metric(&chart.base);
    let mut columns: Vec<Vec<f64>> = chart
        .frame
        .iter()
        .map(|e| {
            let mut v = e.clone();
            v.push(0.0);
            v
        })
        .collect();
    columns.push(chart.inward.clone());
    let mut base_defect: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            base_defect = base_defect.max((quad(n, &gb, &columns[i], &columns[j]) - target).abs());
        }
    }

    let mut separation = f64::INFINITY;
    for (i, a) in chart.samples.iter().enumerate() {
        for b in &chart.samples[i + 1..] {
            if a.chart[..last] != b.chart[..last] {
                let gap = map.wrapped_diff(&a.foot, &b.foot).iter().map(|x| x * x).sum::<f64>().sqrt();
                separation = separation.min(gap);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = chart.radius / 16.0;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..containment {
        let c = loop {
            let mut c: Vec<f64> = (0..n).map(|_| rng.gen_range(-ball..ball)).collect();
            c[last] = c[last].abs();
            if c.iter().map(|x| x * x).sum::<f64>().sqrt() < ball {
                break c;
            }
        };
        let (x, _) = map.forward(&c)?;
        let ratio = map.distance_from_base(&x, &c)? / (chart.radius / 8.0);
        worst = worst.max(ratio);
        if !(ratio < 1.0) {
            violations += 1;
        }
    }

    Ok(ChartReport {
        radius: chart.radius,
        samples: chart.samples.len(),
        orthogonality_defect: orthogonality,
        normal_deviation: normal,
        base_metric_defect: base_defect,
        distance_defect: distance,
        min_foot_separation: separation,
        inverse_defect: chart.inverse_defect,
        containment_samples: containment,
        containment_violations: violations,
        max_containment_ratio: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScalarField;

    fn perturbed_slab(grid: &GridManifold) -> MetricField {
        let two_pi = 2.0 * std::f64::consts::PI;
        let u = ScalarField::from_fn(grid, |y| 0.1 * (two_pi * y[0]).sin() * (two_pi * y[1]).cos() * (1.0 - y[2]));
        MetricField::hyperbolic_slab(grid).conformal(grid, &u).unwrap()
    }

    #[test]
    fn flat_chart_is_a_translation() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let g = MetricField::flat(&grid);
        for (base, sign) in [([0.3, 0.6, 0.0], 1.0), ([0.95, 0.1, 1.0], -1.0)] {
            let chart = build_chart(&grid, &g, &base, MAX_RADIUS).unwrap();
            for s in &chart.samples {
                for i in 0..2 {
                    let d = s.ambient[i] - base[i] - s.chart[i];
                    assert!((d - d.round()).abs() < 1e-12);
                }
                assert!((s.ambient[2] - base[2] - sign * s.chart[2]).abs() < 1e-12);
            }
            let report = validate_chart(&chart, &grid, &g).unwrap();
            assert!(report.orthogonality_defect <= 1e-10, "{report:?}");
            assert!(report.normal_deviation <= 1e-10);
            assert!(report.base_metric_defect <= 1e-12);
            assert!(report.distance_defect <= 1e-10);
            assert!(report.inverse_defect <= 1e-9);
            assert_eq!(report.containment_violations, 0);
            assert!(report.min_foot_separation > 0.0);
        }
    }

    #[test]
    fn slab_chart_measures_distance_to_the_sheet() {
        let grid = GridManifold::uniform(3, 16).unwrap();
        let g = MetricField::hyperbolic_slab(&grid);
        let chart = build_chart(&grid, &g, &[0.4, 0.2, 0.0], MAX_RADIUS).unwrap();
        // Distance to the lower sheet is ln(1 + y_3).
        for s in &chart.samples {
            assert!((s.chart[2] - (1.0 + s.ambient[2]).ln()).abs() < 1e-6);
        }
        let report = validate_chart(&chart, &grid, &g).unwrap();
        assert!(report.distance_defect <= 1e-6, "{report:?}");
        assert!(report.orthogonality_defect <= grid.h().powi(2));
        assert!(report.base_metric_defect <= 1e-8);
        assert_eq!(report.containment_samples, 500);
        assert_eq!(report.containment_violations, 0);
        assert!(report.max_containment_ratio < 0.75);
        assert!(report.min_foot_separation > 1e-3);
    }

    #[test]
    fn orthogonality_defect_is_second_order() {
        let defect = |m: usize| {
            let grid = GridManifold::uniform(3, m).unwrap();
            let g = perturbed_slab(&grid);
            let chart = build_chart(&grid, &g, &[0.3, 0.45, 0.0], MAX_RADIUS).unwrap();
            validate_chart_with(&chart, &grid, &g, 20, 1).unwrap()
        };
        let (coarse, fine) = (defect(16), defect(32));
        let ratio = coarse.orthogonality_defect / fine.orthogonality_defect;
        assert!((3.0..=5.0).contains(&ratio), "{coarse:?} {fine:?}");
        assert!(fine.distance_defect <= 1e-6);
        assert!(fine.normal_deviation < coarse.normal_deviation);
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let g = MetricField::flat(&grid);
        assert!(matches!(build_chart(&grid, &g, &[0.0, 0.0, 0.0], 0.2), Err(Error::Parameter(_))));
        assert!(matches!(build_chart(&grid, &g, &[0.0, 0.0, 0.5], 0.1), Err(Error::Domain(_))));
        assert!(matches!(build_chart(&grid, &g, &[0.0, 0.0], 0.1), Err(Error::Shape(_))));
    }
}
