use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::curvature::{check_t, CurvatureBundle};
use crate::geometry::{
    boundary_mean_curvature, dense, BoundaryField, EigenField, MetricField, ScalarField, TensorField,
};
use crate::grid::{GridManifold, Sheet, Sheets};
use crate::symfunc::{AdmissibleFunction, ConePair, EVAL_MARGIN};

/// Tolerances and the continuation schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverPolicy {
    /// Sup-norm residual tolerance at `s = 1`.
    pub tol_newton: f64,
    /// Sup-norm residual tolerance at intermediate `s`.
    pub tol_path: f64,
    pub max_newton: usize,
    pub homotopy_schedule: Vec<f64>,
    /// Smallest continuation step before giving up.
    pub min_step: f64,
    pub armijo: f64,
    pub max_halvings: usize,
    pub ptc_max_steps: usize,
}

impl Default for SolverPolicy {
    fn default() -> Self {
        Self {
            tol_newton: 1e-10,
            tol_path: 1e-8,
            max_newton: 30,
            homotopy_schedule: Self::uniform_schedule(10),
            min_step: 1e-3,
            armijo: 1e-4,
            max_halvings: 30,
            ptc_max_steps: 400,
        }
    }
}

impl SolverPolicy {
    /// `steps + 1` equally spaced values from 0 to 1.
    pub fn uniform_schedule(steps: usize) -> Vec<f64> {
        let steps = steps.max(1);
        (0..=steps).map(|i| i as f64 / steps as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64, name: &str| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive, got {x}")))
            }
        };
        positive(self.tol_newton, "tol_newton")?;
        positive(self.tol_path, "tol_path")?;
        positive(self.min_step, "min_step")?;
        positive(self.armijo, "armijo")?;
        if self.armijo >= 1.0 {
            return Err(Error::Parameter("armijo must be below 1".into()));
        }
        if self.max_newton == 0 {
            return Err(Error::Parameter("max_newton must be at least 1".into()));
        }
        let s = &self.homotopy_schedule;
        if s.len() < 2 || s[0] != 0.0 || *s.last().unwrap() != 1.0 {
            return Err(Error::Parameter("homotopy schedule must run from 0 to 1".into()));
        }
        if s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("homotopy schedule must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Geometry of the fixed background, computed once per problem.
#[derive(Debug, Clone)]
pub struct Background {
    pub ginv: TensorField,
    pub curvature: CurvatureBundle,
    pub mean_curvature: Sheets<BoundaryField>,
    /// `λ_g(-A^t_g)` per node.
    pub eigenvalues: EigenField,
    /// Smallest cone margin of `λ_g(-A^t_g)`.
    pub min_margin: f64,
}

/// Which of the uniqueness sign hypotheses the data satisfy. Interior
/// admissibility is enforced at construction; the boundary signs are only
/// reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisFlags {
    pub min_cone_margin: f64,
    pub max_mean_curvature: f64,
    pub max_psi: f64,
    pub mean_curvature_nonpositive: bool,
    pub psi_nonpositive: bool,
}

impl HypothesisFlags {
    pub fn in_hypothesis(&self) -> bool {
        self.mean_curvature_nonpositive && self.psi_nonpositive
    }
}

/// A complete boundary-value problem on a fixed background.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    grid: GridManifold,
    metric: MetricField,
    cone: ConePair,
    t: f64,
    phi: ScalarField,
    psi: Sheets<BoundaryField>,
    policy: SolverPolicy,
    background: Background,
    flags: HypothesisFlags,
}

/// Curvature data of `g`; fails unless `-λ_g(A^t_g) ∈ Γ` at every node.
pub fn prepare_background(
    grid: &GridManifold,
    g: &MetricField,
    cone: &dyn AdmissibleFunction,
    t: f64,
) -> Result<Background> {
    check_t(t)?;
    if cone.dim() != grid.n() {
        return Err(Error::Domain(format!("cone dimension {} does not match n = {}", cone.dim(), grid.n())));
    }
    let curvature = CurvatureBundle::compute(g, grid, t)?;
    let n = grid.n();
    let mut values = Vec::with_capacity(grid.len() * n);
    let mut bad = vec![];
    let mut worst = f64::INFINITY;
    let mut neg = vec![0.0; n * n];
    for p in 0..grid.len() {
        for (x, a) in neg.iter_mut().zip(curvature.schouten_t.node(p)) {
            *x = -a;
        }
        let lam = dense::rel_eigenvalues(n, &neg, g.node(p)).ok_or(Error::Definiteness { node: p })?;
        let m = cone.margin(&lam);
        worst = worst.min(m);
        if !(cone.normalized_margin(&lam) > EVAL_MARGIN) {
            bad.push(p);
        }
        values.extend_from_slice(&lam);
    }
    if !bad.is_empty() {
        return Err(Error::ConeViolation { nodes: bad, min_margin: worst });
    }
    let mean_curvature = boundary_mean_curvature(g, grid)?;
    Ok(Background {
        ginv: g.inverse(),
        curvature,
        mean_curvature,
        eigenvalues: EigenField::new(n, values),
        min_margin: worst,
    })
}

fn check_data(grid: &GridManifold, phi: &ScalarField, psi: &Sheets<BoundaryField>) -> Result<()> {
    if phi.len() != grid.len() {
        return Err(Error::Shape(format!("phi has {} values, grid has {} nodes", phi.len(), grid.len())));
    }
    if let Some(p) = phi.values.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Domain(format!(
            "phi must be finite and strictly positive (phi = {} at node {p})",
            phi.values[p]
        )));
    }
    for sheet in Sheet::BOTH {
        let f = &psi[sheet];
        if f.sheet != sheet || f.values.len() != grid.sheet_len() {
            return Err(Error::Shape(format!("psi does not cover the {sheet:?} sheet")));
        }
        if f.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("psi must be finite".into()));
        }
    }
    Ok(())
}

impl ProblemSpec {
    pub fn new(
        grid: GridManifold,
        metric: MetricField,
        cone: ConePair,
        t: f64,
        phi: ScalarField,
        psi: Sheets<BoundaryField>,
    ) -> Result<Self> {
        if metric.n() != grid.n() || metric.len() != grid.len() {
            return Err(Error::Shape("metric does not match grid".into()));
        }
        check_t(t)?;
        check_data(&grid, &phi, &psi)?;
        let background = prepare_background(&grid, &metric, &cone, t)?;
        let flags = Self::hypothesis_flags(&grid, &background, &psi);
        let policy = SolverPolicy::default();
        Ok(Self { grid, metric, cone, t, phi, psi, policy, background, flags })
    }

    /// Mean-curvature signs are judged up to the `O(h²)` discretization error.
    fn hypothesis_flags(grid: &GridManifold, background: &Background, psi: &Sheets<BoundaryField>) -> HypothesisFlags {
        let slack = grid.h() * grid.h();
        let max_mean_curvature = background.mean_curvature.lower.max().max(background.mean_curvature.upper.max());
        let max_psi = psi.lower.max().max(psi.upper.max());
        HypothesisFlags {
            min_cone_margin: background.min_margin,
            max_mean_curvature,
            max_psi,
            mean_curvature_nonpositive: max_mean_curvature <= slack,
            psi_nonpositive: max_psi <= 0.0,
        }
    }

    pub fn with_policy(mut self, policy: SolverPolicy) -> Result<Self> {
        policy.validate()?;
        self.policy = policy;
        Ok(self)
    }

    /// Same background with new data, skipping the curvature computation.
    pub fn with_data(&self, phi: ScalarField, psi: Sheets<BoundaryField>) -> Result<Self> {
        check_data(&self.grid, &phi, &psi)?;
        let mut out = self.clone();
        out.flags = Self::hypothesis_flags(&self.grid, &self.background, &psi);
        out.phi = phi;
        out.psi = psi;
        Ok(out)
    }

    pub fn grid(&self) -> &GridManifold {
        &self.grid
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn cone(&self) -> &ConePair {
        &self.cone
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn phi(&self) -> &ScalarField {
        &self.phi
    }

    pub fn psi(&self) -> &Sheets<BoundaryField> {
        &self.psi
    }

    pub fn policy(&self) -> &SolverPolicy {
        &self.policy
    }

    pub fn background(&self) -> &Background {
        &self.background
    }

    pub fn flags(&self) -> &HypothesisFlags {
        &self.flags
    }

    /// `f(-λ_g(A^t_g))` per node.
    pub fn background_values(&self) -> ScalarField {
        let n = self.grid.n();
        ScalarField::new(
            (0..self.grid.len())
                .map(|p| {
                    self.cone
                        .value(&self.background.eigenvalues.raw()[p * n..(p + 1) * n])
                        .expect("admissible background")
                })
                .collect(),
        )
    }
}

/// Data `(φ, ψ)` for which `v*` solves the problem exactly: curvature of
/// `e^{2v*}g` computed directly on the grid.
pub fn manufactured_data(
    grid: &GridManifold,
    g: &MetricField,
    cone: &ConePair,
    t: f64,
    v_star: &ScalarField,
) -> Result<(ScalarField, Sheets<BoundaryField>)> {
    let gt = g.conformal(grid, v_star)?;
    let bg = prepare_background(grid, &gt, cone, t)?;
    let n = grid.n();
    let phi = ScalarField::new(
        (0..grid.len()).map(|p| cone.value(&bg.eigenvalues.raw()[p * n..(p + 1) * n])).collect::<Result<Vec<f64>>>()?,
    );
    Ok((phi, bg.mean_curvature))
}

/// Data `(φ, ψ)` for which `v*` solves the discrete equations exactly: the
/// transformation laws evaluated with the solver's own stencils.
pub fn consistent_data(
    grid: &GridManifold,
    g: &MetricField,
    cone: &ConePair,
    t: f64,
    v_star: &ScalarField,
) -> Result<(ScalarField, Sheets<BoundaryField>)> {
    let bundle = CurvatureBundle::compute(g, grid, t)?;
    let (_, lam) = crate::conformal::pushforward_schouten_with(v_star, g, grid, &bundle)?;
    let mut phi = Vec::with_capacity(grid.len());
    let mut bad = vec![];
    let mut worst = f64::INFINITY;
    for p in 0..grid.len() {
        let neg: Vec<f64> = lam.node(p).iter().map(|x| -x).collect();
        worst = worst.min(cone.margin(&neg));
        match cone.value(&neg) {
            Ok(f) => phi.push(f),
            Err(_) => {
                bad.push(p);
                phi.push(f64::NAN);
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::ConeViolation { nodes: bad, min_margin: worst });
    }
    let h = boundary_mean_curvature(g, grid)?;
    let psi = crate::conformal::pushforward_mean_curvature_with(v_star, &g.inverse(), grid, &h);
    Ok((ScalarField::new(phi), psi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slab(m: usize) -> (GridManifold, MetricField) {
        let grid = GridManifold::uniform(3, m).unwrap();
        let g = MetricField::hyperbolic_slab(&grid);
        (grid, g)
    }

    fn zero_psi(grid: &GridManifold) -> Sheets<BoundaryField> {
        Sheets::from_fn(|s| BoundaryField::constant(grid, s, 0.0))
    }

    #[test]
    fn validation() {
        let (grid, g) = slab(8);
        let cone = ConePair::new(1, 3).unwrap();
        let phi = ScalarField::constant(&grid, 1.0);
        let err =
            ProblemSpec::new(grid.clone(), g.clone(), cone.clone(), 1.0, phi.clone(), zero_psi(&grid)).unwrap_err();
        assert!(err.to_string().contains("t < 1"));
        let mut bad = phi.clone();
        bad.values[17] = 0.0;
        assert!(ProblemSpec::new(grid.clone(), g.clone(), cone.clone(), 0.0, bad, zero_psi(&grid)).is_err());
        let flat = MetricField::flat(&grid);
        let err = ProblemSpec::new(grid.clone(), flat, cone.clone(), 0.0, phi.clone(), zero_psi(&grid)).unwrap_err();
        assert!(matches!(err, Error::ConeViolation { .. }));
        let spec = ProblemSpec::new(grid.clone(), g, cone, 0.0, phi, zero_psi(&grid)).unwrap();
        assert!(!spec.flags().mean_curvature_nonpositive);
        assert!(spec.flags().psi_nonpositive);
        let policy = SolverPolicy { homotopy_schedule: vec![0.0, 0.7, 0.5, 1.0], ..SolverPolicy::default() };
        assert!(spec.clone().with_policy(policy).is_err());
    }

    #[test]
    fn sol_background_is_in_hypothesis() {
        let grid = GridManifold::uniform(3, 16).unwrap();
        let g = MetricField::sol(&grid, 1.0).unwrap();
        let psi = Sheets::from_fn(|s| BoundaryField::constant(&grid, s, -0.5));
        let phi = ScalarField::constant(&grid, 1.0);
        let spec =
            ProblemSpec::new(grid.clone(), g.clone(), ConePair::new(1, 3).unwrap(), 0.0, phi.clone(), psi.clone())
                .unwrap();
        assert!(spec.flags().psi_nonpositive);
        assert!(spec.flags().max_mean_curvature.abs() < 1e-2);
        // t < 0 makes Sol admissible for every cone
        for k in 1..=3 {
            ProblemSpec::new(grid.clone(), g.clone(), ConePair::new(k, 3).unwrap(), -1.0, phi.clone(), psi.clone())
                .unwrap();
        }
    }

    #[test]
    fn uniform_schedule_has_eleven_points() {
        let s = SolverPolicy::default().homotopy_schedule;
        assert_eq!(s.len(), 11);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[10], 1.0);
        SolverPolicy::default().validate().unwrap();
    }
}
