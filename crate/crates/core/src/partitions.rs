//! The two-way split `A1 | A2` of the mean space and membership queries.
//!
//! Four shapes are supported:
//!
//! * [`PartitionSpec::Threshold`]: `A1 = {max_i nu_i > u}`, `A2 = {max_i nu_i < u}`.
//! * [`PartitionSpec::HalfSpace`]: `A1 = {<a, nu> < b}`, `A2 = {<a, nu> > b}`.
//! * [`PartitionSpec::ConvexSublevel`]: `A2 = {f(nu) <= c}` for convex `f`,
//!   `A1` its complement.
//! * [`PartitionSpec::UnionHalfSpaces`]: `A2 = U_j {<a_j, nu> >= b_j}`, `A1`
//!   the complementary open polytope.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points within this distance of the separating surface classify as
/// [`Side::Boundary`].
pub const TOL_CLASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coefficient {index} of the half-space normal is zero")]
    ZeroCoefficient { index: usize },
    #[error("normal vector of constraint {index} is zero")]
    ZeroNormal { index: usize },
    #[error("a union of half-spaces needs at least one constraint")]
    EmptyUnion,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("radius and semi-axes must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("oracle gradient disagrees with finite differences at probe {probe} (coordinate {coord}: {analytic} vs {numeric})")]
    GradientMismatch {
        probe: usize,
        coord: usize,
        analytic: f64,
        numeric: f64,
    },
    #[error("oracle violates convexity between probes {0} and {1}")]
    NotConvex(usize, usize),
}

pub type Result<T> = std::result::Result<T, PartitionError>;

/// Which component a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A1,
    A2,
    Boundary,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::A1 => Side::A2,
            Side::A2 => Side::A1,
            Side::Boundary => Side::Boundary,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::A1 => "A1",
            Side::A2 => "A2",
            Side::Boundary => "boundary",
        })
    }
}

/// The closed half-space `{nu : <a, nu> >= b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl HalfSpace {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        Self { a, b }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        dot(&self.a, x)
    }
}

/// A user-supplied convex, continuously differentiable function.
pub trait ConvexOracle: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// One coordinate of a separable convex function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Term {
    /// `weight * (x - center)^2`
    Quadratic { center: f64, weight: f64 },
    /// `coef * x`
    Linear { coef: f64 },
}

impl Term {
    pub(crate) fn value(&self, x: f64) -> f64 {
        match *self {
            Term::Quadratic { center, weight } => weight * (x - center) * (x - center),
            Term::Linear { coef } => coef * x,
        }
    }

    pub(crate) fn deriv(&self, x: f64) -> f64 {
        match *self {
            Term::Quadratic { center, weight } => 2.0 * weight * (x - center),
            Term::Linear { coef } => coef,
        }
    }

    /// Minimizer of the term over the interval `[lo, hi]`.
    pub(crate) fn argmin_on(&self, lo: f64, hi: f64, fallback: f64) -> f64 {
        match *self {
            Term::Quadratic { center, .. } => center.clamp(lo, hi),
            Term::Linear { coef } if coef > 0.0 => lo,
            Term::Linear { coef } if coef < 0.0 => hi,
            Term::Linear { .. } => fallback.clamp(lo, hi),
        }
    }
}

/// The convex function whose sublevel set is `A2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexFunction {
    /// `sum_i weights_i * (nu_i - center_i)^2`; balls and axis-aligned ellipsoids.
    Quadratic { center: Vec<f64>, weights: Vec<f64> },
    /// `sum_i coefficients_i * nu_i`.
    Linear { coefficients: Vec<f64> },
    #[serde(skip)]
    Custom(Arc<dyn ConvexOracle>),
}

impl PartialEq for ConvexFunction {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                ConvexFunction::Quadratic {
                    center: c1,
                    weights: w1,
                },
                ConvexFunction::Quadratic {
                    center: c2,
                    weights: w2,
                },
            ) => c1 == c2 && w1 == w2,
            (
                ConvexFunction::Linear { coefficients: a },
                ConvexFunction::Linear { coefficients: b },
            ) => a == b,
            (ConvexFunction::Custom(a), ConvexFunction::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl ConvexFunction {
    pub fn dim(&self) -> usize {
        match self {
            ConvexFunction::Quadratic { center, .. } => center.len(),
            ConvexFunction::Linear { coefficients } => coefficients.len(),
            ConvexFunction::Custom(oracle) => oracle.dim(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ConvexFunction::Custom(oracle) => oracle.value(x),
            _ => self
                .terms()
                .expect("separable")
                .iter()
                .zip(x)
                .map(|(t, &xi)| t.value(xi))
                .sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ConvexFunction::Custom(oracle) => oracle.gradient(x),
            _ => self
                .terms()
                .expect("separable")
                .iter()
                .zip(x)
                .map(|(t, &xi)| t.deriv(xi))
                .collect(),
        }
    }

    /// Per-coordinate decomposition, when the function is separable.
    pub(crate) fn terms(&self) -> Option<Vec<Term>> {
        match self {
            ConvexFunction::Quadratic { center, weights } => Some(
                center
                    .iter()
                    .zip(weights)
                    .map(|(&center, &weight)| Term::Quadratic { center, weight })
                    .collect(),
            ),
            ConvexFunction::Linear { coefficients } => Some(
                coefficients
                    .iter()
                    .map(|&coef| Term::Linear { coef })
                    .collect(),
            ),
            ConvexFunction::Custom(_) => None,
        }
    }
}

/// `A2 = {nu : f(nu) <= c}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexSublevel {
    pub f: ConvexFunction,
    pub c: f64,
}

impl ConvexSublevel {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(PartitionError::NonPositiveScale(radius));
        }
        let weights = vec![1.0; center.len()];
        Ok(Self {
            f: ConvexFunction::Quadratic { center, weights },
            c: radius * radius,
        })
    }

    /// Axis-aligned ellipsoid `sum_i ((nu_i - center_i) / semi_axes_i)^2 <= 1`.
    pub fn ellipsoid(center: Vec<f64>, semi_axes: Vec<f64>) -> Result<Self> {
        if center.len() != semi_axes.len() {
            return Err(PartitionError::DimensionMismatch {
                expected: center.len(),
                got: semi_axes.len(),
            });
        }
        if let Some(&s) = semi_axes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(PartitionError::NonPositiveScale(s));
        }
        let weights = semi_axes.iter().map(|s| 1.0 / (s * s)).collect();
        Ok(Self {
            f: ConvexFunction::Quadratic { center, weights },
            c: 1.0,
        })
    }

    /// The half-space `{<a, nu> >= b}` written as `{-<a, nu> <= -b}`.
    pub fn half_space(a: &[f64], b: f64) -> Self {
        Self {
            f: ConvexFunction::Linear {
                coefficients: a.iter().map(|x| -x).collect(),
            },
            c: -b,
        }
    }

    /// Wraps a custom oracle after checking its gradient against central
    /// differences and its first-order convexity inequality on `probes`.
    pub fn custom(oracle: Arc<dyn ConvexOracle>, c: f64, probes: &[Vec<f64>]) -> Result<Self> {
        let dim = oracle.dim();
        let h = 1e-6;
        let mut grads = Vec::with_capacity(probes.len());
        for (p, x) in probes.iter().enumerate() {
            if x.len() != dim {
                return Err(PartitionError::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            let g = oracle.gradient(x);
            if g.len() != dim {
                return Err(PartitionError::DimensionMismatch {
                    expected: dim,
                    got: g.len(),
                });
            }
            for (i, &gi) in g.iter().enumerate() {
                let mut up = x.clone();
                let mut down = x.clone();
                up[i] += h;
                down[i] -= h;
                let numeric = (oracle.value(&up) - oracle.value(&down)) / (2.0 * h);
                if (numeric - gi).abs() > 1e-4 * gi.abs().max(1.0) {
                    return Err(PartitionError::GradientMismatch {
                        probe: p,
                        coord: i,
                        analytic: gi,
                        numeric,
                    });
                }
            }
            grads.push(g);
        }
        for (i, x) in probes.iter().enumerate() {
            let fx = oracle.value(x);
            for (j, y) in probes.iter().enumerate() {
                let step: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
                let linear = fx + dot(&grads[i], &step);
                if oracle.value(y) < linear - 1e-9 * linear.abs().max(1.0) {
                    return Err(PartitionError::NotConvex(i, j));
                }
            }
        }
        Ok(Self {
            f: ConvexFunction::Custom(oracle),
            c,
        })
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }
}

/// Declarative description of the `A1 | A2` split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Threshold { u: f64 },
    HalfSpace { a: Vec<f64>, b: f64 },
    ConvexSublevel { set: ConvexSublevel },
    UnionHalfSpaces { constraints: Vec<HalfSpace> },
}

impl PartitionSpec {
    pub fn threshold(u: f64) -> Self {
        PartitionSpec::Threshold { u }
    }

    pub fn half_space(a: Vec<f64>, b: f64) -> Self {
        PartitionSpec::HalfSpace { a, b }
    }

    pub fn convex(set: ConvexSublevel) -> Self {
        PartitionSpec::ConvexSublevel { set }
    }

    pub fn union(constraints: Vec<HalfSpace>) -> Self {
        PartitionSpec::UnionHalfSpaces { constraints }
    }

    /// Number of arms the spec is written for; `None` for thresholds.
    pub fn dim(&self) -> Option<usize> {
        match self {
            PartitionSpec::Threshold { .. } => None,
            PartitionSpec::HalfSpace { a, .. } => Some(a.len()),
            PartitionSpec::ConvexSublevel { set } => Some(set.dim()),
            PartitionSpec::UnionHalfSpaces { constraints } => {
                constraints.first().map(|c| c.a.len())
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PartitionSpec::Threshold { .. } => "threshold",
            PartitionSpec::HalfSpace { .. } => "half_space",
            PartitionSpec::ConvexSublevel { .. } => "convex_sublevel",
            PartitionSpec::UnionHalfSpaces { .. } => "union_half_spaces",
        }
    }

    /// Structural checks for a problem with `k` arms.
    pub fn validate(&self, k: usize) -> Result<()> {
        let check_dim = |got: usize| {
            if got == k {
                Ok(())
            } else {
                Err(PartitionError::DimensionMismatch { expected: k, got })
            }
        };
        let finite = |xs: &[f64], what| {
            if xs.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(PartitionError::NonFinite(what))
            }
        };
        match self {
            PartitionSpec::Threshold { u } => finite(&[*u], "threshold"),
            PartitionSpec::HalfSpace { a, b } => {
                check_dim(a.len())?;
                finite(a, "half-space normal")?;
                finite(&[*b], "half-space offset")?;
                match a.iter().position(|&x| x == 0.0) {
                    Some(index) => Err(PartitionError::ZeroCoefficient { index }),
                    None => Ok(()),
                }
            }
            PartitionSpec::ConvexSublevel { set } => {
                check_dim(set.dim())?;
                finite(&[set.c], "sublevel")?;
                match &set.f {
                    ConvexFunction::Quadratic { center, weights } => {
                        check_dim(weights.len())?;
                        finite(center, "center")?;
                        finite(weights, "weights")?;
                        match weights.iter().find(|w| **w <= 0.0) {
                            Some(&w) => Err(PartitionError::NonPositiveScale(w)),
                            None => Ok(()),
                        }
                    }
                    ConvexFunction::Linear { coefficients } => finite(coefficients, "coefficients"),
                    ConvexFunction::Custom(_) => Ok(()),
                }
            }
            PartitionSpec::UnionHalfSpaces { constraints } => {
                if constraints.is_empty() {
                    return Err(PartitionError::EmptyUnion);
                }
                for (index, h) in constraints.iter().enumerate() {
                    check_dim(h.a.len())?;
                    finite(&h.a, "constraint normal")?;
                    finite(&[h.b], "constraint offset")?;
                    if h.a.iter().all(|&x| x == 0.0) {
                        return Err(PartitionError::ZeroNormal { index });
                    }
                }
                Ok(())
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Signed Euclidean distance `(<a, point> - b) / |a|`.
pub fn distance_to_halfspace(a: &[f64], b: f64, point: &[f64]) -> Result<f64> {
    if a.len() != point.len() {
        return Err(PartitionError::DimensionMismatch {
            expected: a.len(),
            got: point.len(),
        });
    }
    let n = norm(a);
    if n == 0.0 {
        return Err(PartitionError::ZeroNormal { index: 0 });
    }
    Ok((dot(a, point) - b) / n)
}

fn side_from_margin(margin_a2: f64) -> Side {
    if margin_a2 > TOL_CLASS {
        Side::A2
    } else if margin_a2 < -TOL_CLASS {
        Side::A1
    } else {
        Side::Boundary
    }
}

/// Which component contains `point`. Points within [`TOL_CLASS`] of the
/// separating surface are reported as [`Side::Boundary`].
pub fn classify(spec: &PartitionSpec, point: &[f64]) -> Result<Side> {
    if let Some(k) = spec.dim() {
        if k != point.len() {
            return Err(PartitionError::DimensionMismatch {
                expected: k,
                got: point.len(),
            });
        }
    }
    if point.is_empty() {
        return Err(PartitionError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let margin = match spec {
        PartitionSpec::Threshold { u } => {
            -(point.iter().copied().fold(f64::NEG_INFINITY, f64::max) - u)
        }
        PartitionSpec::HalfSpace { a, b } => distance_to_halfspace(a, *b, point)?,
        PartitionSpec::ConvexSublevel { set } => {
            let g = set.f.gradient(point);
            let scale = norm(&g).max(1.0);
            (set.c - set.f.value(point)) / scale
        }
        PartitionSpec::UnionHalfSpaces { constraints } => {
            let mut best = f64::NEG_INFINITY;
            for (index, h) in constraints.iter().enumerate() {
                let d = distance_to_halfspace(&h.a, h.b, point)
                    .map_err(|_| PartitionError::ZeroNormal { index })?;
                best = best.max(d);
            }
            best
        }
    };
    Ok(side_from_margin(margin))
}
