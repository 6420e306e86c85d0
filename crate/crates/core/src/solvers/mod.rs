//! Solvers for the max-min lower-bound problem
//!
//! ```text
//! C*(mu) = max_{w in simplex} inf_{nu in alternative} sum_i w_i K_i(mu_i | nu_i),   T* = 1 / C*
//! ```
//!
//! for every supported [`PartitionSpec`], plus the inner infimum `g(mu, w)`
//! that the stopping rule of Track-and-Stop evaluates with `w = counts`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partitions::{classify, PartitionError, PartitionSpec, Side};
use crate::spef::{bisect_increasing, SpefError, SpefModel};

mod convex;
mod halfspace;
mod threshold;
mod two_arm;
mod union;

pub use convex::solve_convex;
pub use halfspace::solve_halfspace;
pub use threshold::solve_threshold;
pub use two_arm::{solve_two_arm_gaussian, TwoArmCase, TwoArmSolution};
pub use union::solve_union_halfspaces;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("arm {arm}: {source}")]
    Arm { arm: usize, source: SpefError },
    #[error(transparent)]
    Spef(#[from] SpefError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("instance has {arms} arm models but {means} means")]
    LengthMismatch { arms: usize, means: usize },
    #[error("instance needs at least one arm")]
    NoArms,
    #[error("mean vector lies on the boundary between A1 and A2")]
    BoundaryMean,
    #[error("arm {arm} has mean equal to the threshold; the characteristic time is infinite")]
    DegenerateInstance { arm: usize },
    #[error("the alternative region is empty within the mean domain")]
    InfeasibleAlternative,
    #[error("mean vector lies inside half-space {index}, expected it outside every constraint")]
    MeanInsideConstraint { index: usize },
    #[error("supporting hyperplane at the optimum is not unique; weights are undetermined (C* = {c_star})")]
    NonUniqueHyperplane { nu_star: Vec<f64>, c_star: f64 },
    #[error("unsupported case: {0}")]
    UnsupportedCase(String),
    #[error("weights must be non-negative, finite and not all zero")]
    InvalidWeights,
    #[error("{0}")]
    InvalidInput(String),
    #[error("{what} failed to converge")]
    NoConvergence { what: &'static str },
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Outer-loop update for the union-of-half-spaces solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMethod {
    /// Cutting planes from the supergradients, each step solving the small
    /// LP `max z s.t. z <= <d_k, w>, w in simplex`.
    CuttingPlane,
    /// Projected supergradient ascent with the given step schedule.
    Supergradient(StepSchedule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `scale / sqrt(k)`
    Diminishing {
        scale: f64,
    },
    Fixed {
        step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_kkt: f64,
    pub tol_bisect: f64,
    pub max_outer_iters: usize,
    pub simplex_floor: f64,
    pub active_set_tol: f64,
    pub outer_method: OuterMethod,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-8,
            tol_bisect: 1e-10,
            max_outer_iters: 5000,
            simplex_floor: 1e-9,
            active_set_tol: 1e-6,
            outer_method: OuterMethod::CuttingPlane,
        }
    }
}

/// A solved lower-bound instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundSolution {
    /// Optimal sampling proportions.
    pub w_star: Vec<f64>,
    /// The minimizing alternative at `w_star`.
    pub nu_star: Vec<f64>,
    pub c_star: f64,
    /// Characteristic time `1 / c_star`.
    pub t_star: f64,
    pub active_set: Vec<usize>,
    /// Constraints attaining the inner minimum (unions of half-spaces only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub active_constraints: Vec<usize>,
    pub kkt_residuals: BTreeMap<String, f64>,
    /// Every alternative attaining the inner infimum at `w_star`, in
    /// constraint order; `nu_star` is the first.
    pub alternatives: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl LowerBoundSolution {
    pub(crate) fn new(w_star: Vec<f64>, nu_star: Vec<f64>, c_star: f64) -> Self {
        Self {
            alternatives: vec![nu_star.clone()],
            w_star,
            nu_star,
            c_star,
            t_star: 1.0 / c_star,
            active_set: Vec::new(),
            active_constraints: Vec::new(),
            kkt_residuals: BTreeMap::new(),
            iterations: 0,
            converged: true,
        }
    }

    pub(crate) fn residual(mut self, name: &str, value: f64) -> Self {
        self.kkt_residuals.insert(name.to_string(), value);
        self
    }
}

/// Value and (when attained) minimizer of the inner infimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub value: f64,
    pub minimizer: Option<Vec<f64>>,
}

pub(crate) fn check_instance(models: &[SpefModel], mu: &[f64]) -> Result<()> {
    if models.is_empty() {
        return Err(SolverError::NoArms);
    }
    if models.len() != mu.len() {
        return Err(SolverError::LengthMismatch {
            arms: models.len(),
            means: mu.len(),
        });
    }
    for (arm, (m, &x)) in models.iter().zip(mu).enumerate() {
        m.validate()
            .and_then(|_| m.check_mean(x))
            .map_err(|source| SolverError::Arm { arm, source })?;
    }
    Ok(())
}

pub(crate) fn check_weights(weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != k {
        return Err(SolverError::LengthMismatch {
            arms: k,
            means: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|w| *w == 0.0) {
        return Err(SolverError::InvalidWeights);
    }
    Ok(())
}

pub(crate) fn side_of(spec: &PartitionSpec, mu: &[f64]) -> Result<Side> {
    spec.validate(mu.len())?;
    match classify(spec, mu)? {
        Side::Boundary => Err(SolverError::BoundaryMean),
        side => Ok(side),
    }
}

/// Bisection for an increasing function whose evaluation may fail; the
/// first failure aborts the search.
pub(crate) fn bisect_fallible(g: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<f64> {
    let err = std::cell::RefCell::new(None);
    let x = bisect_increasing(
        |x| match g(x) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        lo,
        hi,
    );
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(x?),
    }
}

pub(crate) fn arm_err(arm: usize) -> impl Fn(SpefError) -> SolverError {
    move |source| SolverError::Arm { arm, source }
}

/// `sum_i w_i K_i(mu_i | nu_i)`.
pub(crate) fn weighted_kl(models: &[SpefModel], mu: &[f64], w: &[f64], nu: &[f64]) -> f64 {
    models
        .iter()
        .zip(mu)
        .zip(w.iter().zip(nu))
        .map(|((m, &x), (&wi, &y))| {
            if wi == 0.0 {
                0.0
            } else {
                wi * m.kl_unchecked(x, y)
            }
        })
        .sum()
}

pub(crate) fn kl_vector(models: &[SpefModel], mu: &[f64], nu: &[f64]) -> Vec<f64> {
    models
        .iter()
        .zip(mu.iter().zip(nu))
        .map(|(m, (&x, &y))| m.kl_unchecked(x, y))
        .collect()
}

/// Solves the lower-bound problem at `mu` for whichever component contains
/// it.
///
/// Thresholds and half-spaces are handled on both sides. Convex sublevel
/// sets are handled for `mu` in `A1` only. For unions of half-spaces with
/// `mu` in `A2` the alternative is the closed polytope `A1`; that case is
/// solved when the min-max point lies on a single face, and reported as
/// [`SolverError::NonUniqueHyperplane`] at a corner.
pub fn solve_lb(
    models: &[SpefModel],
    mu: &[f64],
    spec: &PartitionSpec,
    settings: &SolverSettings,
) -> Result<LowerBoundSolution> {
    check_instance(models, mu)?;
    match spec {
        PartitionSpec::Threshold { u } => solve_threshold(models, mu, *u),
        PartitionSpec::HalfSpace { a, b } => solve_halfspace(models, mu, a, *b),
        PartitionSpec::ConvexSublevel { set } => solve_convex(models, mu, set, settings),
        PartitionSpec::UnionHalfSpaces { constraints } => match side_of(spec, mu)? {
            Side::A1 => solve_union_halfspaces(models, mu, constraints, settings),
            _ => union::solve_polytope_alternative(models, mu, constraints),
        },
    }
}

/// `inf` over the closure of the alternative of `sum_i w_i K_i(mu_i | nu_i)`.
///
/// Weights need not be normalized; the value is linear in them. A minimizer
/// is returned when the infimum is attained inside the mean domain.
pub fn inner_inf(
    models: &[SpefModel],
    mu: &[f64],
    weights: &[f64],
    spec: &PartitionSpec,
) -> Result<InnerSolution> {
    check_instance(models, mu)?;
    check_weights(weights, mu.len())?;
    let side = side_of(spec, mu)?;
    match spec {
        PartitionSpec::Threshold { u } => threshold::inner(models, mu, weights, *u, side),
        PartitionSpec::HalfSpace { a, b } => {
            let (a, b) = halfspace::oriented(a, *b, side);
            halfspace::inner(models, mu, weights, &a, b)
        }
        PartitionSpec::ConvexSublevel { set } => match side {
            Side::A1 => convex::inner(models, mu, weights, set),
            _ => Err(SolverError::UnsupportedCase(
                "inner infimum over the complement of a convex set".into(),
            )),
        },
        PartitionSpec::UnionHalfSpaces { constraints } => match side {
            Side::A1 => union::inner_union(models, mu, weights, constraints).map(|(s, _)| s),
            _ => halfspace::inner_polytope(models, mu, weights, constraints),
        },
    }
}
