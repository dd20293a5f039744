//! Geodesic integration on an interpolated metric.

use serde::Serialize;

use super::spline::MetricInterpolant;
use crate::error::{Error, Result};
use crate::geometry::dense;
use crate::grid::MAX_DIM;

/// Tolerance on `|ẋ|_g = 1` for shooting directions.
pub const UNIT_TOL: f64 = 1e-8;
/// How far past a sheet a path may stray before it counts as leaving.
pub const DOMAIN_TOL: f64 = 1e-12;

/// Smooth metric with first derivatives, `dg[k·d² + i·d + j] = ∂_k g_ij`.
pub trait MetricSource {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], g: &mut [f64], dg: &mut [f64]);
}

impl MetricSource for MetricInterpolant {
    fn dim(&self) -> usize {
        self.n()
    }

    fn eval(&self, x: &[f64], g: &mut [f64], dg: &mut [f64]) {
        MetricInterpolant::eval(self, x, g, dg)
    }
}

/// Metric induced on the level set `{y_n = level}` in its tangential coordinates.
pub struct SheetMetric<'a> {
    pub ambient: &'a MetricInterpolant,
    pub level: f64,
}

impl MetricSource for SheetMetric<'_> {
    fn dim(&self) -> usize {
        self.ambient.n() - 1
    }

    fn eval(&self, x: &[f64], g: &mut [f64], dg: &mut [f64]) {
        let n = self.ambient.n();
        let d = n - 1;
        let mut y = [0.0; MAX_DIM];
        y[..d].copy_from_slice(&x[..d]);
        y[d] = self.level;
        let mut ga = [0.0; MAX_DIM * MAX_DIM];
        let mut dga = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
        self.ambient.eval(&y[..n], &mut ga[..n * n], &mut dga[..n * n * n]);
        for i in 0..d {
            for j in 0..d {
                g[i * d + j] = ga[i * n + j];
                for k in 0..d {
                    dg[k * d * d + i * d + j] = dga[k * n * n + i * n + j];
                }
            }
        }
    }
}

pub fn norm(src: &dyn MetricSource, x: &[f64], v: &[f64]) -> f64 {
    let d = src.dim();
    let mut g = [0.0; MAX_DIM * MAX_DIM];
    let mut dg = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
    src.eval(x, &mut g[..d * d], &mut dg[..d * d * d]);
    quad(d, &g, v, v).sqrt()
}

pub(crate) fn quad(d: usize, g: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += g[i * d + j] * a[i] * b[j];
        }
    }
    s
}

/// `ẍ^l = -Γ^l_ij ẋ^i ẋ^j`.
fn acceleration(src: &dyn MetricSource, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
    let d = src.dim();
    let mut g = [0.0; MAX_DIM * MAX_DIM];
    let mut dg = [0.0; MAX_DIM * MAX_DIM * MAX_DIM];
    src.eval(x, &mut g[..d * d], &mut dg[..d * d * d]);
    let ginv = dense::inverse_spd(d, &g[..d * d])
        .ok_or_else(|| Error::Chart("interpolated metric lost definiteness".into()))?;
    let mut w = [0.0; MAX_DIM];
    for (m, wm) in w.iter_mut().enumerate().take(d) {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += (dg[i * d * d + m * d + j] - 0.5 * dg[m * d * d + i * d + j]) * v[i] * v[j];
            }
        }
        *wm = s;
    }
    for l in 0..d {
        out[l] = -(0..d).map(|m| ginv[l * d + m] * w[m]).sum::<f64>();
    }
    Ok(())
}

/// One classical Runge-Kutta step of the first-order system `(x, ẋ)`.
pub(crate) fn rk4_step(src: &dyn MetricSource, x: &[f64], v: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = src.dim();
    let mut a1 = vec![0.0; d];
    acceleration(src, x, v, &mut a1)?;
    let x2: Vec<f64> = (0..d).map(|i| x[i] + 0.5 * dt * v[i]).collect();
    let v2: Vec<f64> = (0..d).map(|i| v[i] + 0.5 * dt * a1[i]).collect();
    let mut a2 = vec![0.0; d];
    acceleration(src, &x2, &v2, &mut a2)?;
    let x3: Vec<f64> = (0..d).map(|i| x[i] + 0.5 * dt * v2[i]).collect();
    let v3: Vec<f64> = (0..d).map(|i| v[i] + 0.5 * dt * a2[i]).collect();
    let mut a3 = vec![0.0; d];
    acceleration(src, &x3, &v3, &mut a3)?;
    let x4: Vec<f64> = (0..d).map(|i| x[i] + dt * v3[i]).collect();
    let v4: Vec<f64> = (0..d).map(|i| v[i] + dt * a3[i]).collect();
    let mut a4 = vec![0.0; d];
    acceleration(src, &x4, &v4, &mut a4)?;
    let xn = (0..d).map(|i| x[i] + dt / 6.0 * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i])).collect();
    let vn = (0..d).map(|i| v[i] + dt / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i])).collect();
    Ok((xn, vn))
}

/// Endpoint and velocity after integrating for `length` in `steps` steps,
/// with no domain check.
pub(crate) fn flow(
    src: &dyn MetricSource,
    x: &[f64],
    v: &[f64],
    length: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dt = length / steps as f64;
    let (mut x, mut v) = (x.to_vec(), v.to_vec());
    for _ in 0..steps {
        (x, v) = rk4_step(src, &x, &v, dt)?;
    }
    Ok((x, v))
}

/// Step count giving steps no longer than `max_step`.
pub(crate) fn steps_for(length: f64, max_step: f64) -> usize {
    ((length.abs() / max_step).ceil() as usize).max(4)
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicPath {
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    /// Parameter increment between consecutive points.
    pub step: f64,
}

impl GeodesicPath {
    pub fn end(&self) -> &[f64] {
        self.points.last().expect("paths hold the start point")
    }

    pub fn end_velocity(&self) -> &[f64] {
        self.velocities.last().expect("paths hold the start velocity")
    }
}

/// Integrates the geodesic from `start` with g-unit `direction` for arc
/// length `length` in `steps` RK4 steps. Leaving `0 ≤ y_n ≤ 1` is an error
/// carrying the (linearly interpolated) exit parameter.
pub fn shoot_geodesic(
    interp: &MetricInterpolant,
    start: &[f64],
    direction: &[f64],
    length: f64,
    steps: usize,
) -> Result<GeodesicPath> {
    let n = interp.n();
    if start.len() != n || direction.len() != n {
        return Err(Error::Shape(format!("expected {n} components")));
    }
    if steps == 0 || !length.is_finite() || length < 0.0 {
        return Err(Error::Parameter("need a finite length ≥ 0 and at least one step".into()));
    }
    let inside = |y: f64| (-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&y);
    if !inside(start[n - 1]) || start.iter().any(|x| !x.is_finite()) {
        return Err(Error::OutOfDomain { parameter: 0.0 });
    }
    let speed = norm(interp, start, direction);
    if !((speed - 1.0).abs() <= UNIT_TOL) {
        return Err(Error::Parameter(format!("direction has g-length {speed}, expected 1")));
    }
    let dt = length / steps as f64;
    let mut points = vec![start.to_vec()];
    let mut velocities = vec![direction.to_vec()];
    for k in 0..steps {
        let (x, v) = rk4_step(interp, &points[k], &velocities[k], dt)?;
        if !inside(x[n - 1]) || x.iter().any(|c| !c.is_finite()) {
            let (y0, y1) = (points[k][n - 1], x[n - 1]);
            let wall = if y1 < 0.0 { 0.0 } else { 1.0 };
            let frac = if (y1 - y0).abs() > 0.0 { ((wall - y0) / (y1 - y0)).clamp(0.0, 1.0) } else { 0.0 };
            return Err(Error::OutOfDomain { parameter: (k as f64 + frac) * dt });
        }
        points.push(x);
        velocities.push(v);
    }
    Ok(GeodesicPath { points, velocities, step: dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MetricField;
    use crate::grid::GridManifold;

    fn slab(m: usize) -> MetricInterpolant {
        let grid = GridManifold::uniform(3, m).unwrap();
        MetricInterpolant::new(&grid, &MetricField::hyperbolic_slab(&grid)).unwrap()
    }

    #[test]
    fn flat_normal_shot_is_a_straight_segment() {
        let grid = GridManifold::uniform(3, 8).unwrap();
        let flat = MetricInterpolant::new(&grid, &MetricField::flat(&grid)).unwrap();
        let path = shoot_geodesic(&flat, &[0.25, 0.5, 0.0], &[0.0, 0.0, 1.0], 0.3, 16).unwrap();
        for (k, p) in path.points.iter().enumerate() {
            let t = k as f64 * path.step;
            assert!((p[0] - 0.25).abs() < 1e-14 && (p[1] - 0.5).abs() < 1e-14 && (p[2] - t).abs() < 1e-14);
        }
        assert!((path.end()[2] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn slab_normal_geodesic_matches_closed_form() {
        // Unit-speed vertical geodesic of (1+z)^{-2}δ: z(t) = e^t - 1.
        let interp = slab(16);
        let path = shoot_geodesic(&interp, &[0.1, 0.7, 0.0], &[0.0, 0.0, 1.0], 0.3, 256).unwrap();
        assert!((path.end()[2] - (0.3f64.exp() - 1.0)).abs() < 1e-6);
        assert!(path.end()[0] == 0.1 && path.end()[1] == 0.7);
    }

    #[test]
    fn speed_is_conserved_on_slab() {
        let interp = slab(16);
        let start = [0.2, 0.4, 0.05];
        let raw = [0.6, -0.3, 0.5];
        let s = norm(&interp, &start, &raw);
        let dir: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let path = shoot_geodesic(&interp, &start, &dir, 0.3, 256).unwrap();
        let drift = path
            .points
            .iter()
            .zip(&path.velocities)
            .map(|(x, v)| (norm(&interp, x, v) - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-8, "{drift}");
    }

    #[test]
    fn reversal_returns_to_start() {
        let interp = slab(16);
        let start = [0.2, 0.4, 0.05];
        let raw = [0.6, -0.3, 0.5];
        let s = norm(&interp, &start, &raw);
        let dir: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let there = shoot_geodesic(&interp, &start, &dir, 0.3, 256).unwrap();
        let back: Vec<f64> = there.end_velocity().iter().map(|x| -x).collect();
        let unit = norm(&interp, there.end(), &back);
        let back: Vec<f64> = back.iter().map(|x| x / unit).collect();
        let home = shoot_geodesic(&interp, there.end(), &back, 0.3, 256).unwrap();
        let gap = home.end().iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-8, "{gap}");
    }

    #[test]
    fn leaving_the_slab_reports_exit_parameter() {
        let interp = slab(16);
        let start = [0.5, 0.5, 0.1];
        let down = -1.0 / norm(&interp, &start, &[0.0, 0.0, 1.0]);
        let err = shoot_geodesic(&interp, &start, &[0.0, 0.0, down], 0.5, 64).unwrap_err();
        // Distance from z=0.1 down to the sheet is ln(1.1).
        match err {
            Error::OutOfDomain { parameter } => assert!((parameter - 1.1f64.ln()).abs() < 1e-2, "{parameter}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_non_unit_direction() {
        let interp = slab(8);
        assert!(matches!(
            shoot_geodesic(&interp, &[0.5, 0.5, 0.1], &[0.0, 0.0, 2.0], 0.1, 8),
            Err(Error::Parameter(_))
        ));
    }
}
