//! Elementary symmetric functions, Gårding cones and `f = σ_k^{1/k}`.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized cone margin below which `f` is not evaluated.
pub const EVAL_MARGIN: f64 = 1e-12;
/// Normalized cone margin below which derivatives are flagged ill-conditioned.
pub const CONDITIONING_MARGIN: f64 = 1e-8;
/// Relative tolerance on the largest Hessian eigenvalue.
pub const CONCAVITY_TOL: f64 = 1e-8;

const SAMPLE_BOX: (f64, f64) = (-1.0, 2.0);
const MAX_REJECTIONS_PER_SAMPLE: usize = 100_000;

/// Eigenvalue vector with at least three finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EigenVector(Vec<f64>);

impl EigenVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 3 {
            return Err(Error::Domain(format!("eigenvector of length {} (need ≥ 3)", entries.len())));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite eigenvalue".into()));
        }
        Ok(Self(entries))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for EigenVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EigenVector> for Vec<f64> {
    fn from(v: EigenVector) -> Self {
        v.0
    }
}

impl std::ops::Deref for EigenVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `e[j] = σ_j(λ)` for `j = 0..=k`, optionally skipping up to two entries.
fn elementary(lambda: &[f64], k: usize, skip: [usize; 2]) -> [f64; 8] {
    let mut e = [0.0; 8];
    e[0] = 1.0;
    for (i, &x) in lambda.iter().enumerate() {
        if i == skip[0] || i == skip[1] {
            continue;
        }
        for j in (1..=k).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

const NONE: usize = usize::MAX;

pub fn sigma_k(lambda: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > lambda.len() || k > 7 {
        return Err(Error::Domain(format!("k = {k} outside 1..={}", lambda.len())));
    }
    Ok(elementary(lambda, k, [NONE, NONE])[k])
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeCheck {
    pub inside: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradHess {
    pub gradient: Vec<f64>,
    /// Row-major `n x n`.
    pub hessian: Vec<f64>,
    /// Set when the point is within [`CONDITIONING_MARGIN`] of the cone boundary.
    pub ill_conditioned: bool,
}

/// An admissible pair `(f, Γ)`: a concave, degree-one homogeneous function on
/// an open symmetric convex cone.
pub trait AdmissibleFunction: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;
    /// Signed distance-like quantity; positive exactly inside the cone.
    fn margin(&self, lambda: &[f64]) -> f64;
    fn value(&self, lambda: &[f64]) -> Result<f64>;
    fn grad_hess(&self, lambda: &[f64]) -> Result<GradHess>;
    fn label(&self) -> String;

    /// Hypothesis constant ε̄ of (f3), when one is asserted.
    fn epsilon_bar(&self) -> Option<f64> {
        None
    }

    /// Margin of `λ/‖λ‖_∞`, invariant under positive scaling.
    fn normalized_margin(&self, lambda: &[f64]) -> f64 {
        let scale = lambda.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut buf = [0.0; 8];
        for (b, x) in buf.iter_mut().zip(lambda) {
            *b = x / scale;
        }
        self.margin(&buf[..lambda.len()])
    }

    fn contains(&self, lambda: &[f64]) -> bool {
        self.margin(lambda) > 0.0
    }
}

/// `f = σ_k^{1/k}` on `Γ_k ⊂ R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConePair {
    pub k: usize,
    pub n: usize,
    /// Hypothesis constant to check against; `None` means estimate only.
    #[serde(default)]
    pub epsilon_bar: Option<f64>,
    #[serde(default = "default_budget")]
    pub sample_budget: usize,
}

fn default_budget() -> usize {
    200
}

impl ConePair {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        if !(3..=7).contains(&n) {
            return Err(Error::Domain(format!("dimension n = {n} must be at least 3")));
        }
        if k == 0 || k > n {
            return Err(Error::Domain(format!("k = {k} outside 1..={n}")));
        }
        Ok(Self { k, n, epsilon_bar: None, sample_budget: default_budget() })
    }

    pub fn with_epsilon_bar(mut self, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Domain("epsilon_bar must be positive".into()));
        }
        self.epsilon_bar = Some(eps);
        Ok(self)
    }

    /// `f(1,…,1) = C(n,k)^{1/k}`.
    pub fn value_at_identity(&self) -> f64 {
        binomial(self.n, self.k).powf(1.0 / self.k as f64)
    }

    fn check_len(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.n {
            return Err(Error::Domain(format!("expected {} eigenvalues, got {}", self.n, lambda.len())));
        }
        Ok(())
    }
}

impl AdmissibleFunction for ConePair {
    fn dim(&self) -> usize {
        self.n
    }

    fn margin(&self, lambda: &[f64]) -> f64 {
        let e = elementary(lambda, self.k, [NONE, NONE]);
        e[1..=self.k].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn value(&self, lambda: &[f64]) -> Result<f64> {
        self.check_len(lambda)?;
        let nm = self.normalized_margin(lambda);
        if !(nm > EVAL_MARGIN) {
            return Err(Error::ConeViolation { nodes: vec![], min_margin: self.margin(lambda) });
        }
        let s = elementary(lambda, self.k, [NONE, NONE])[self.k];
        Ok(s.powf(1.0 / self.k as f64))
    }

    fn grad_hess(&self, lambda: &[f64]) -> Result<GradHess> {
        let f = self.value(lambda)?;
        let (n, k) = (self.n, self.k);
        let kf = k as f64;
        let sk = elementary(lambda, k, [NONE, NONE])[k];
        // f = σ_k^{1/k}: ∂f = (f/(k σ_k)) ∂σ_k,
        // ∂²f = (f/(k σ_k)) [∂²σ_k + (1/k - 1) ∂σ_k ∂σ_kᵀ / σ_k].
        let c = f / (kf * sk);
        let d1: Vec<f64> = (0..n).map(|i| elementary(lambda, k - 1, [i, NONE])[k - 1]).collect();
        let gradient: Vec<f64> = d1.iter().map(|d| c * d).collect();
        let mut hessian = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let second = if i != j && k >= 2 { elementary(lambda, k - 2, [i, j])[k - 2] } else { 0.0 };
                hessian[i * n + j] = c * (second + (1.0 / kf - 1.0) * d1[i] * d1[j] / sk);
            }
        }
        let ill_conditioned = self.normalized_margin(lambda) < CONDITIONING_MARGIN;
        if ill_conditioned {
            log::warn!("f derivatives evaluated within {CONDITIONING_MARGIN:e} of the cone boundary");
        }
        Ok(GradHess { gradient, hessian, ill_conditioned })
    }

    fn epsilon_bar(&self) -> Option<f64> {
        self.epsilon_bar
    }

    fn label(&self) -> String {
        format!("sigma_{}^(1/{}) on Gamma_{} (n={})", self.k, self.k, self.k, self.n)
    }
}

pub fn cone_contains(lambda: &[f64], cone: &dyn AdmissibleFunction) -> ConeCheck {
    let margin = cone.margin(lambda);
    ConeCheck { inside: margin > 0.0, margin }
}

pub fn f_eval(lambda: &[f64], cone: &dyn AdmissibleFunction) -> Result<f64> {
    cone.value(lambda)
}

pub fn f_grad_hess(lambda: &[f64], cone: &dyn AdmissibleFunction) -> Result<GradHess> {
    cone.grad_hess(lambda)
}

/// Worst case of one hypothesis check over the sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub worst: f64,
    pub tolerance: f64,
    pub failures: usize,
}

impl CheckSummary {
    fn new(tolerance: f64) -> Self {
        Self { worst: f64::NEG_INFINITY, tolerance, failures: 0 }
    }

    /// Records a quantity that must not exceed the tolerance.
    fn record(&mut self, value: f64) {
        self.worst = self.worst.max(value);
        if !(value <= self.tolerance) {
            self.failures += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violations {
    /// Relative homogeneity residual `|f(sλ) - s f(λ)| / (s f(λ))`.
    pub homogeneity: CheckSummary,
    /// Largest Hessian eigenvalue relative to the Hessian's Frobenius norm.
    pub concavity: CheckSummary,
    /// Negated smallest gradient entry (a failure when ≥ 0).
    pub monotonicity: CheckSummary,
    /// `f(λ̂) - σ₁(λ̂)/ε̄` on the level set `f = 1`; only when ε̄ is given.
    pub f3_upper: Option<CheckSummary>,
    /// `ε̄ - Σ f_{λ_i}(λ̂)` on the level set; only when ε̄ is given.
    pub f3_lower: Option<CheckSummary>,
    /// Samples of `Γ` that fail to lie in `Γ_1`.
    pub nesting: CheckSummary,
}

impl Violations {
    pub fn total(&self) -> usize {
        self.homogeneity.failures
            + self.concavity.failures
            + self.monotonicity.failures
            + self.f3_upper.map_or(0, |c| c.failures)
            + self.f3_lower.map_or(0, |c| c.failures)
            + self.nesting.failures
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub cone: String,
    pub violations: Violations,
    /// Largest ε̄ with `f ≤ σ₁/ε̄` and `Σ f_{λ_i} ≥ ε̄` on every normalized sample.
    pub certified_epsilon_bar: f64,
    pub seed: u64,
    pub samples: usize,
    pub draws: usize,
    pub passed: bool,
}

/// Uniform rejection sampler for the cone from the box `[-1,2]^n`.
pub fn sample_cone(cone: &dyn AdmissibleFunction, rng: &mut impl Rng) -> Option<(Vec<f64>, usize)> {
    let n = cone.dim();
    for draw in 1..=MAX_REJECTIONS_PER_SAMPLE {
        let lambda: Vec<f64> = (0..n).map(|_| rng.gen_range(SAMPLE_BOX.0..SAMPLE_BOX.1)).collect();
        if cone.normalized_margin(&lambda) > EVAL_MARGIN {
            return Some((lambda, draw));
        }
    }
    None
}

pub fn check_hypotheses(cone: &dyn AdmissibleFunction, samples: usize, seed: u64) -> Result<HypothesisReport> {
    if samples == 0 {
        return Err(Error::Domain("at least one sample is required".into()));
    }
    let n = cone.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps_given = cone.epsilon_bar();
    let mut homogeneity = CheckSummary::new(1e-12);
    let mut concavity = CheckSummary::new(CONCAVITY_TOL);
    let mut monotonicity = CheckSummary::new(0.0);
    let mut nesting = CheckSummary::new(0.0);
    let mut f3_upper = eps_given.map(|_| CheckSummary::new(1e-12));
    let mut f3_lower = eps_given.map(|_| CheckSummary::new(1e-12));
    let mut certified = f64::INFINITY;
    let mut draws = 0;

    let mut points: Vec<Vec<f64>> = Vec::with_capacity(samples + 1);
    points.push(vec![1.0; n]);
    while points.len() < samples + 1 {
        let (lambda, d) = sample_cone(cone, &mut rng)
            .ok_or_else(|| Error::Domain("cone sampler exhausted its rejection budget".into()))?;
        draws += d;
        points.push(lambda);
    }

    for lambda in &points {
        let f = cone.value(lambda)?;
        for s in [1e-6, 1e6, rng.gen_range(0.1..10.0)] {
            let scaled: Vec<f64> = lambda.iter().map(|x| s * x).collect();
            let fs = cone.value(&scaled)?;
            homogeneity.record((fs - s * f).abs() / (s * f));
        }

        let gh = cone.grad_hess(lambda)?;
        let h = DMatrix::from_row_slice(n, n, &gh.hessian);
        let norm = h.norm();
        let top = SymmetricEigen::new(h).eigenvalues.max();
        concavity.record(if norm > 0.0 { top / norm } else { top });

        let min_grad = gh.gradient.iter().cloned().fold(f64::INFINITY, f64::min);
        monotonicity.record(-min_grad);

        let s1: f64 = lambda.iter().sum();
        nesting.record(if s1 > 0.0 { 0.0 } else { 1.0 });

        // Normalize to the level set f = 1 by homogeneity.
        let s1_hat = s1 / f;
        let grad_sum: f64 = cone.grad_hess(&lambda.iter().map(|x| x / f).collect::<Vec<_>>())?.gradient.iter().sum();
        certified = certified.min(s1_hat).min(grad_sum);
        if let (Some(eps), Some(up), Some(lo)) = (eps_given, f3_upper.as_mut(), f3_lower.as_mut()) {
            up.record(1.0 - s1_hat / eps);
            lo.record(eps - grad_sum);
        }
    }

    let violations = Violations { homogeneity, concavity, monotonicity, f3_upper, f3_lower, nesting };
    let passed = violations.total() == 0;
    Ok(HypothesisReport {
        cone: cone.label(),
        violations,
        certified_epsilon_bar: certified,
        seed,
        samples,
        draws,
        passed,
    })
}
