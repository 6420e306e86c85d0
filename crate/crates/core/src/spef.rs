//! KL calculus for single-parameter exponential families in mean
//! parametrization.
//!
//! Every family here has a KL divergence that is strictly convex in its
//! second argument and diverges at the boundary of the mean domain, which is
//! what the lower-bound solvers rely on. Natural parameters and cumulant
//! functions are never materialized: all quantities are closed form in the
//! pair of means `(mu, nu)`.
//!
//! | Family | Mean domain | `kl(mu, nu)` |
//! |--------|-------------|--------------|
//! | Gaussian, variance `s2` | `(-inf, inf)` | `(mu - nu)^2 / (2 s2)` |
//! | Bernoulli | `(0, 1)` | `mu ln(mu/nu) + (1-mu) ln((1-mu)/(1-nu))` |
//! | Poisson | `(0, inf)` | `nu - mu + mu ln(mu/nu)` |

use std::fmt;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance of every scalar inversion.
pub const TOL_INV: f64 = 1e-10;
/// Iteration cap shared by bracket expansion and bisection.
pub const MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpefError {
    #[error("value {value} lies outside the {family} mean domain {domain}")]
    OutOfDomain {
        family: &'static str,
        value: f64,
        domain: MeanDomain,
    },
    #[error("slope {slope} is outside the range of the {family} KL derivative at mean {mu}")]
    SlopeOutOfRange {
        family: &'static str,
        mu: f64,
        slope: f64,
    },
    #[error("KL target must be a finite non-negative number, got {0}")]
    InvalidTarget(f64),
    #[error("Gaussian variance must be positive and finite, got {0}")]
    InvalidVariance(f64),
    #[error("{what} did not reach tolerance after {iters} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iters: usize,
        residual: f64,
    },
}

pub type Result<T> = std::result::Result<T, SpefError>;

/// Open interval of attainable means. Either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDomain {
    pub lower: f64,
    pub upper: f64,
}

impl MeanDomain {
    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    pub fn is_bounded_below(&self) -> bool {
        self.lower.is_finite()
    }

    pub fn is_bounded_above(&self) -> bool {
        self.upper.is_finite()
    }
}

impl fmt::Display for MeanDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lower, self.upper)
    }
}

/// One arm's distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpefModel {
    /// Gaussian with known variance.
    Gaussian {
        variance: f64,
    },
    Bernoulli,
    Poisson,
}

/// Which side of `mu` an inverse should land on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlSide {
    Above,
    Below,
}

/// Interior margin applied to bounded sides of a mean domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampPolicy {
    pub epsilon: f64,
}

impl Default for ClampPolicy {
    fn default() -> Self {
        Self { epsilon: 1e-6 }
    }
}

impl SpefModel {
    pub fn gaussian(variance: f64) -> Result<Self> {
        let model = SpefModel::Gaussian { variance };
        model.validate()?;
        Ok(model)
    }

    pub fn unit_gaussian() -> Self {
        SpefModel::Gaussian { variance: 1.0 }
    }

    /// Checks the family parameters (only the Gaussian variance can be wrong).
    pub fn validate(&self) -> Result<()> {
        match *self {
            SpefModel::Gaussian { variance } if !(variance > 0.0 && variance.is_finite()) => {
                Err(SpefError::InvalidVariance(variance))
            }
            _ => Ok(()),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            SpefModel::Gaussian { .. } => "gaussian",
            SpefModel::Bernoulli => "bernoulli",
            SpefModel::Poisson => "poisson",
        }
    }

    pub fn mean_domain(&self) -> MeanDomain {
        match self {
            SpefModel::Gaussian { .. } => MeanDomain {
                lower: f64::NEG_INFINITY,
                upper: f64::INFINITY,
            },
            SpefModel::Bernoulli => MeanDomain {
                lower: 0.0,
                upper: 1.0,
            },
            SpefModel::Poisson => MeanDomain {
                lower: 0.0,
                upper: f64::INFINITY,
            },
        }
    }

    pub fn check_mean(&self, x: f64) -> Result<()> {
        let domain = self.mean_domain();
        if domain.contains(x) {
            Ok(())
        } else {
            Err(SpefError::OutOfDomain {
                family: self.family_name(),
                value: x,
                domain,
            })
        }
    }

    /// `K(mu | nu)`.
    pub fn kl(&self, mu: f64, nu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        self.check_mean(nu)?;
        Ok(self.kl_unchecked(mu, nu))
    }

    /// Closed-form KL without domain checks. Values outside the domain give
    /// `inf` or `NaN`.
    pub(crate) fn kl_unchecked(&self, mu: f64, nu: f64) -> f64 {
        if mu == nu {
            return 0.0;
        }
        let value = match *self {
            SpefModel::Gaussian { variance } => (mu - nu) * (mu - nu) / (2.0 * variance),
            SpefModel::Bernoulli => xlogy_ratio(mu, nu) + xlogy_ratio(1.0 - mu, 1.0 - nu),
            SpefModel::Poisson => nu - mu + xlogy_ratio(mu, nu),
        };
        value.max(0.0)
    }

    /// Derivative of `K(mu | nu)` with respect to `nu`.
    pub fn kl_dnu(&self, mu: f64, nu: f64) -> Result<f64> {
        self.check_mean(mu)?;
        self.check_mean(nu)?;
        Ok(self.kl_dnu_unchecked(mu, nu))
    }

    pub(crate) fn kl_dnu_unchecked(&self, mu: f64, nu: f64) -> f64 {
        match *self {
            SpefModel::Gaussian { variance } => (nu - mu) / variance,
            SpefModel::Bernoulli => (nu - mu) / (nu * (1.0 - nu)),
            SpefModel::Poisson => (nu - mu) / nu,
        }
    }

    /// The `nu` on the requested side of `mu` with `K(mu | nu) = target`.
    pub fn kl_inverse(&self, mu: f64, target: f64, side: KlSide) -> Result<f64> {
        self.check_mean(mu)?;
        if !(target >= 0.0 && target.is_finite()) {
            return Err(SpefError::InvalidTarget(target));
        }
        if target == 0.0 {
            return Ok(mu);
        }
        if let SpefModel::Gaussian { variance } = *self {
            let radius = (2.0 * variance * target).sqrt();
            return Ok(match side {
                KlSide::Above => mu + radius,
                KlSide::Below => mu - radius,
            });
        }

        let domain = self.mean_domain();
        // g is increasing in nu on the chosen side and changes sign once.
        let (lo, hi) = match side {
            KlSide::Below => (domain.lower, mu),
            KlSide::Above => {
                let hi = if domain.is_bounded_above() {
                    domain.upper
                } else {
                    expand_upper(mu, |nu| self.kl_unchecked(mu, nu) >= target)?
                };
                (mu, hi)
            }
        };
        let g = |nu: f64| match side {
            KlSide::Above => self.kl_unchecked(mu, nu) - target,
            KlSide::Below => target - self.kl_unchecked(mu, nu),
        };
        let nu = bisect_increasing(g, lo, hi)?;
        let residual = (self.kl_unchecked(mu, nu) - target).abs();
        if residual > TOL_INV * target.max(1.0) {
            return Err(SpefError::NoConvergence {
                what: "kl_inverse",
                iters: MAX_ITER,
                residual,
            });
        }
        Ok(nu)
    }

    /// The unique `nu` with `kl_dnu(mu, nu) = slope`.
    pub fn kl_dnu_inverse(&self, mu: f64, slope: f64) -> Result<f64> {
        self.check_mean(mu)?;
        if !slope.is_finite() {
            return Err(self.slope_error(mu, slope));
        }
        match self.kl_dnu_inverse_saturating(mu, slope) {
            nu if self.mean_domain().contains(nu) => Ok(nu),
            _ => Err(self.slope_error(mu, slope)),
        }
    }

    /// Like [`SpefModel::kl_dnu_inverse`] but maps slopes beyond the range of
    /// the derivative to the corresponding domain boundary. Assumes `mu` is
    /// in the domain.
    pub(crate) fn kl_dnu_inverse_saturating(&self, mu: f64, slope: f64) -> f64 {
        if slope == 0.0 {
            return mu;
        }
        match *self {
            SpefModel::Gaussian { variance } => mu + variance * slope,
            // s nu^2 + (1 - s) nu - mu = 0, root in (0, 1); each branch
            // avoids cancellation.
            SpefModel::Bernoulli => {
                if slope == f64::INFINITY {
                    1.0
                } else if slope == f64::NEG_INFINITY {
                    0.0
                } else if slope > 1.0 {
                    let d = slope - 1.0;
                    (d + (d * d + 4.0 * slope * mu).sqrt()) / (2.0 * slope)
                } else {
                    let d = 1.0 - slope;
                    2.0 * mu / (d + (d * d + 4.0 * slope * mu).sqrt())
                }
            }
            SpefModel::Poisson => {
                if slope >= 1.0 {
                    f64::INFINITY
                } else {
                    mu / (1.0 - slope)
                }
            }
        }
    }

    fn slope_error(&self, mu: f64, slope: f64) -> SpefError {
        SpefError::SlopeOutOfRange {
            family: self.family_name(),
            mu,
            slope,
        }
    }

    /// Nearest point at least `policy.epsilon` inside every finite boundary.
    pub fn clamp_to_interior(&self, x: f64, policy: ClampPolicy) -> f64 {
        let domain = self.mean_domain();
        let mut y = x;
        if domain.is_bounded_below() {
            y = y.max(domain.lower + policy.epsilon);
        }
        if domain.is_bounded_above() {
            y = y.min(domain.upper - policy.epsilon);
        }
        y
    }

    /// One draw from the family member with the given mean.
    pub fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> Result<f64> {
        self.check_mean(mean)?;
        Ok(match *self {
            SpefModel::Gaussian { variance } => Normal::new(mean, variance.sqrt())
                .expect("validated variance")
                .sample(rng),
            SpefModel::Bernoulli => {
                if Bernoulli::new(mean).expect("mean in (0,1)").sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
            SpefModel::Poisson => Poisson::new(mean).expect("positive mean").sample(rng),
        })
    }
}

/// `x ln(x / y)` with the `0 ln 0 = 0` convention.
fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// Doubles the step from 1 until `reached(mu + step)` holds.
pub(crate) fn expand_upper(mu: f64, reached: impl Fn(f64) -> bool) -> Result<f64> {
    let mut step = 1.0;
    for _ in 0..MAX_ITER {
        let hi = mu + step;
        if reached(hi) {
            return Ok(hi);
        }
        step *= 2.0;
    }
    Err(SpefError::NoConvergence {
        what: "bracket expansion",
        iters: MAX_ITER,
        residual: f64::INFINITY,
    })
}

/// Root of an increasing function on the open interval `(lo, hi)`, assuming
/// `g` is negative near `lo` and positive near `hi`. Endpoints are never
/// evaluated. Runs until the bracket cannot be split further.
pub(crate) fn bisect_increasing(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut best = 0.5 * (lo + hi);
    let mut best_abs = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(best);
        }
        let v = g(mid);
        if v.abs() < best_abs {
            best = mid;
            best_abs = v.abs();
        }
        if v == 0.0 {
            return Ok(mid);
        } else if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best_abs.is_finite() {
        Ok(best)
    } else {
        Err(SpefError::NoConvergence {
            what: "bisection",
            iters: MAX_ITER,
            residual: best_abs,
        })
    }
}
