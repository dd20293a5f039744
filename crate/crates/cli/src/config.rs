//! Run configuration: a single JSON document describing grid, background,
//! problem data, solver policy and outputs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use yamabe_core::geometry::{boundary_mean_curvature, BoundaryField, MetricField, ScalarField};
use yamabe_core::grid::{GridManifold, Sheet, Sheets};
use yamabe_core::pde::{manufactured_data, ProblemSpec, SolverPolicy};
use yamabe_core::symfunc::ConePair;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config is not valid JSON for a run: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<yamabe_core::Error> for ConfigError {
    fn from(e: yamabe_core::Error) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    pub n: usize,
    /// Cells per axis; the normal axis gets `cells + 1` nodes.
    pub cells: usize,
    /// Lengths of the periodic axes (default 1).
    #[serde(default)]
    pub periods: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundConfig {
    Flat,
    HyperbolicSlab,
    Sol {
        rate: f64,
    },
    WarpedSol {
        rate: f64,
        warp: f64,
    },
    /// `e^{2u}δ` with `u` sampled at the nodes.
    ConformalCustom {
        u: Vec<f64>,
    },
}

/// Interior field: a constant, node samples, or seeded smooth noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarSpec {
    Constant(f64),
    Samples(Vec<f64>),
    Smooth {
        amplitude: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Constant(f64),
    Sheets {
        lower: f64,
        upper: f64,
    },
    /// `ψ = h_g` on both sheets.
    MeanCurvature,
    Samples {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

/// Exact solution `a sin(2πy₁)cos(2πy₂) + b cos(1.5 y_n)` whose data are
/// computed from the curvature of `e^{2v*}g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedConfig {
    pub tangential: f64,
    pub normal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub k: usize,
    pub t: f64,
    #[serde(default)]
    pub phi: Option<ScalarSpec>,
    #[serde(default)]
    pub psi: Option<BoundarySpec>,
    #[serde(default)]
    pub manufactured: Option<ManufacturedConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Continuation,
    /// Newton at `s = 1` from the initial guess, without continuation.
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub policy: SolverPolicy,
    pub initial: ScalarSpec,
    /// Starting fields for the uniqueness probe.
    pub seeds: Vec<ScalarSpec>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Continuation,
            policy: SolverPolicy::default(),
            initial: ScalarSpec::Constant(0.0),
            seeds: vec![ScalarSpec::Constant(0.0), ScalarSpec::Smooth { amplitude: 0.3, seed: None }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: "out".into(), formats: vec![Format::Csv, Format::Json] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifold: ManifoldConfig,
    pub background: BackgroundConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Parses and validates a configuration without building any fields.
pub fn parse(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a run needs, built from a config at one resolution.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub initial: ScalarField,
    pub exact: Option<ScalarField>,
}

fn finite(x: f64, name: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be finite"))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.manifold.n;
        if !(3..=yamabe_core::grid::MAX_DIM).contains(&n) {
            return invalid(format!("manifold.n = {n} outside 3..={}", yamabe_core::grid::MAX_DIM));
        }
        if self.manifold.cells < yamabe_core::grid::MIN_NODES_PER_AXIS {
            return invalid(format!("manifold.cells must be at least {}", yamabe_core::grid::MIN_NODES_PER_AXIS));
        }
        if let Some(p) = &self.manifold.periods {
            if p.len() != n - 1 || p.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return invalid(format!("manifold.periods needs {} positive lengths", n - 1));
            }
        }
        let pr = &self.problem;
        if !pr.t.is_finite() || pr.t >= 1.0 {
            return invalid(format!("problem.t = {} violates the requirement t < 1", pr.t));
        }
        if pr.k == 0 || pr.k > n {
            return invalid(format!("problem.k = {} must satisfy 1 ≤ k ≤ n = {n}", pr.k));
        }
        match (&pr.manufactured, &pr.phi, &pr.psi) {
            (Some(m), None, None) => {
                finite(m.tangential, "manufactured.tangential")?;
                finite(m.normal, "manufactured.normal")?;
            }
            (Some(_), _, _) => return invalid("problem.manufactured replaces phi and psi; give one or the other"),
            (None, Some(phi), Some(psi)) => {
                match phi {
                    ScalarSpec::Constant(c) if !(c.is_finite() && *c > 0.0) => {
                        return invalid(format!("problem.phi must be positive, got {c}"))
                    }
                    ScalarSpec::Samples(v) if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) => {
                        return invalid("problem.phi must be positive at every node")
                    }
                    ScalarSpec::Smooth { .. } => return invalid("problem.phi must be a constant or samples"),
                    _ => {}
                }
                match psi {
                    BoundarySpec::Constant(c) => finite(*c, "problem.psi")?,
                    BoundarySpec::Sheets { lower, upper } => {
                        finite(*lower, "problem.psi.lower")?;
                        finite(*upper, "problem.psi.upper")?;
                    }
                    BoundarySpec::Samples { lower, upper } => {
                        if lower.iter().chain(upper).any(|x| !x.is_finite()) {
                            return invalid("problem.psi samples must be finite");
                        }
                    }
                    BoundarySpec::MeanCurvature => {}
                }
            }
            _ => return invalid("problem needs phi and psi, or manufactured"),
        }
        match &self.background {
            BackgroundConfig::Sol { rate } => finite(*rate, "background.rate")?,
            BackgroundConfig::WarpedSol { rate, warp } => {
                finite(*rate, "background.rate")?;
                finite(*warp, "background.warp")?;
            }
            BackgroundConfig::ConformalCustom { u } if u.iter().any(|x| !x.is_finite()) => {
                return invalid("background.u must be finite");
            }
            _ => {}
        }
        for spec in std::iter::once(&self.solver.initial).chain(&self.solver.seeds) {
            match spec {
                ScalarSpec::Constant(c) => finite(*c, "solver field")?,
                ScalarSpec::Samples(v) if v.iter().any(|x| !x.is_finite()) => {
                    return invalid("solver field samples must be finite")
                }
                ScalarSpec::Smooth { amplitude, .. } => finite(*amplitude, "solver smooth amplitude")?,
                _ => {}
            }
        }
        self.solver.policy.validate()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<GridManifold> {
        self.grid_with(self.manifold.cells)
    }

    /// Grid at another resolution (for refinement studies).
    pub fn grid_with(&self, cells: usize) -> Result<GridManifold> {
        let n = self.manifold.n;
        let mut shape = vec![cells; n];
        shape[n - 1] = cells + 1;
        let periods = self.manifold.periods.clone().unwrap_or_else(|| vec![1.0; n - 1]);
        Ok(GridManifold::new(shape, periods)?)
    }

    /// Whether the background can be rebuilt at other resolutions.
    pub fn is_resolution_free(&self) -> bool {
        !matches!(self.background, BackgroundConfig::ConformalCustom { .. })
            && !matches!(self.problem.phi, Some(ScalarSpec::Samples(_)))
            && !matches!(self.problem.psi, Some(BoundarySpec::Samples { .. }))
    }

    pub fn metric(&self, grid: &GridManifold) -> Result<MetricField> {
        Ok(match &self.background {
            BackgroundConfig::Flat => MetricField::flat(grid),
            BackgroundConfig::HyperbolicSlab => MetricField::hyperbolic_slab(grid),
            BackgroundConfig::Sol { rate } => MetricField::sol(grid, *rate)?,
            BackgroundConfig::WarpedSol { rate, warp } => MetricField::warped_sol(grid, *rate, *warp)?,
            BackgroundConfig::ConformalCustom { u } => {
                if u.len() != grid.len() {
                    return invalid(format!("background.u has {} samples, grid has {} nodes", u.len(), grid.len()));
                }
                MetricField::conformally_flat(grid, &ScalarField::new(u.clone()))?
            }
        })
    }

    pub fn scalar(&self, grid: &GridManifold, spec: &ScalarSpec, salt: u64) -> Result<ScalarField> {
        Ok(match spec {
            ScalarSpec::Constant(c) => ScalarField::constant(grid, *c),
            ScalarSpec::Samples(v) => {
                if v.len() != grid.len() {
                    return invalid(format!("field has {} samples, grid has {} nodes", v.len(), grid.len()));
                }
                ScalarField::new(v.clone())
            }
            ScalarSpec::Smooth { amplitude, seed } => smooth_noise(grid, *amplitude, seed.unwrap_or(self.seed ^ salt)),
        })
    }

    pub fn exact(&self, grid: &GridManifold) -> Option<ScalarField> {
        self.problem.manufactured.map(|m| {
            let n = grid.n();
            ScalarField::from_fn(grid, |y| {
                m.tangential * (2.0 * PI * y[0]).sin() * (2.0 * PI * y[1]).cos() + m.normal * (1.5 * y[n - 1]).cos()
            })
        })
    }

    pub fn build(&self) -> Result<Problem> {
        self.build_at(&self.grid()?)
    }

    pub fn build_at(&self, grid: &GridManifold) -> Result<Problem> {
        let g = self.metric(grid)?;
        let cone = ConePair::new(self.problem.k, grid.n())?;
        let t = self.problem.t;
        let exact = self.exact(grid);
        let (phi, psi) = match (&exact, &self.problem.phi, &self.problem.psi) {
            (Some(vs), _, _) => manufactured_data(grid, &g, &cone, t, vs)?,
            (None, Some(phi), Some(psi)) => (self.scalar(grid, phi, 0)?, self.boundary(grid, &g, psi)?),
            _ => return invalid("problem needs phi and psi, or manufactured"),
        };
        if phi.min().is_nan() || phi.min() <= 0.0 {
            return invalid("phi must be positive at every node");
        }
        let spec = ProblemSpec::new(grid.clone(), g, cone, t, phi, psi)?.with_policy(self.solver.policy.clone())?;
        let initial = self.scalar(grid, &self.solver.initial, 1)?;
        Ok(Problem { spec, initial, exact })
    }

    fn boundary(&self, grid: &GridManifold, g: &MetricField, spec: &BoundarySpec) -> Result<Sheets<BoundaryField>> {
        Ok(match spec {
            BoundarySpec::Constant(c) => Sheets::from_fn(|s| BoundaryField::constant(grid, s, *c)),
            BoundarySpec::Sheets { lower, upper } => Sheets::new(
                BoundaryField::constant(grid, Sheet::Lower, *lower),
                BoundaryField::constant(grid, Sheet::Upper, *upper),
            ),
            BoundarySpec::MeanCurvature => boundary_mean_curvature(g, grid)?,
            BoundarySpec::Samples { lower, upper } => Sheets::new(
                BoundaryField::new(grid, Sheet::Lower, lower.clone())?,
                BoundaryField::new(grid, Sheet::Upper, upper.clone())?,
            ),
        })
    }

    /// Starting fields for the uniqueness probe.
    pub fn seed_fields(&self, grid: &GridManifold) -> Result<Vec<ScalarField>> {
        self.solver.seeds.iter().enumerate().map(|(i, s)| self.scalar(grid, s, 100 + i as u64)).collect()
    }
}

/// Sum of a few low Fourier modes with seeded phases, sup norm at most `amplitude`.
pub fn smooth_noise(grid: &GridManifold, amplitude: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n();
    let periods = grid.periods();
    let modes: Vec<(Vec<f64>, f64, f64)> = (0..4)
        .map(|_| {
            let freq: Vec<f64> = (0..n)
                .map(|a| {
                    if a + 1 < n {
                        2.0 * PI * rng.gen_range(0..2) as f64 / periods[a]
                    } else {
                        rng.gen_range(0.5..2.0)
                    }
                })
                .collect();
            (freq, rng.gen_range(0.0..2.0 * PI), rng.gen_range(-1.0..1.0))
        })
        .collect();
    ScalarField::from_fn(grid, |y| {
        amplitude
            * 0.25
            * modes
                .iter()
                .map(|(f, phase, c)| c * (f.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + phase).sin())
                .sum::<f64>()
    })
}
