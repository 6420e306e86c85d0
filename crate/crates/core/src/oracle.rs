//! Brute-force evaluation of the lower-bound problem on small instances.
//!
//! Nothing here calls the solvers: the simplex is gridded exhaustively and
//! the inner infimum is a grid search over a parametrization of the
//! alternative region's boundary, refined coarse-to-fine around the best
//! grid point. Used as an independent check of the solvers.

use rayon::prelude::*;
use thiserror::Error;

use crate::partitions::{classify, ConvexFunction, HalfSpace, PartitionError, PartitionSpec, Side};
use crate::spef::{KlSide, SpefModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("brute force supports at most 3 arms, got {0}")]
    TooManyArms(usize),
    #[error("brute force does not support {0}")]
    Unsupported(&'static str),
    #[error("mean vector lies on the partition boundary")]
    BoundaryMean,
    #[error("instance has {arms} arm models but {means} means")]
    LengthMismatch { arms: usize, means: usize },
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("could not bracket the alternative region")]
    Unreachable,
}

pub type Result<T> = std::result::Result<T, OracleError>;

/// Grid resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Simplex spacing; `None` picks 1e-3 for two arms and 1e-2 for three.
    pub simplex_step: Option<f64>,
    /// Boundary search extends to KL level `box_halfwidth * L0 / max(w_i, 0.01)`
    /// in arm `i`, where `L0` is the smallest level (on a doubling ladder) at
    /// which the KL box around `mu` reaches the alternative.
    pub box_halfwidth: f64,
    /// Final spacing of the boundary search, relative to the initial range.
    pub boundary_step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            simplex_step: None,
            box_halfwidth: 6.0,
            boundary_step: 1e-3,
        }
    }
}

impl GridSpec {
    fn simplex_step_for(&self, k: usize) -> f64 {
        self.simplex_step
            .unwrap_or(if k <= 2 { 1e-3 } else { 1e-2 })
    }
}

/// Approximate optimum of the lower-bound problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEstimate {
    pub c_star: f64,
    pub w_star: Vec<f64>,
}

/// A piece of the alternative region over which the inner problem is searched.
#[derive(Debug, Clone)]
enum Piece {
    /// `{<a, nu> = b}`, optionally intersected with `{<a_k, nu> <= b_k}`.
    Hyperplane {
        a: Vec<f64>,
        b: f64,
        within: Vec<HalfSpace>,
    },
    /// Arm `arm` at or above `u`, the others at their means.
    RaiseOne { arm: usize, u: f64 },
    /// Every arm at or below `u`.
    LowerAll { u: f64 },
    /// `{sum_i q_i (nu_i - center_i)^2 = c}`.
    Ellipsoid {
        center: Vec<f64>,
        q: Vec<f64>,
        c: f64,
    },
}

struct Instance<'a> {
    models: &'a [SpefModel],
    mu: &'a [f64],
    pieces: Vec<Piece>,
    level: f64,
    grid: GridSpec,
}

fn pieces_for(spec: &PartitionSpec, mu: &[f64]) -> Result<Vec<Piece>> {
    spec.validate(mu.len())?;
    let side = classify(spec, mu)?;
    if side == Side::Boundary {
        return Err(OracleError::BoundaryMean);
    }
    let k = mu.len();
    Ok(match (spec, side) {
        (PartitionSpec::Threshold { u }, Side::A1) => vec![Piece::LowerAll { u: *u }],
        (PartitionSpec::Threshold { u }, _) => {
            (0..k).map(|arm| Piece::RaiseOne { arm, u: *u }).collect()
        }
        (PartitionSpec::HalfSpace { a, b }, _) => vec![Piece::Hyperplane {
            a: a.clone(),
            b: *b,
            within: vec![],
        }],
        (PartitionSpec::ConvexSublevel { set }, Side::A1) => match &set.f {
            ConvexFunction::Quadratic { center, weights } if weights.iter().all(|&q| q > 0.0) => {
                vec![Piece::Ellipsoid {
                    center: center.clone(),
                    q: weights.clone(),
                    c: set.c,
                }]
            }
            ConvexFunction::Linear { coefficients } => vec![Piece::Hyperplane {
                a: coefficients.clone(),
                b: set.c,
                within: vec![],
            }],
            _ => return Err(OracleError::Unsupported("this convex function")),
        },
        (PartitionSpec::ConvexSublevel { .. }, _) => {
            return Err(OracleError::Unsupported("means inside a convex set"))
        }
        (PartitionSpec::UnionHalfSpaces { constraints }, Side::A1) => constraints
            .iter()
            .map(|c| Piece::Hyperplane {
                a: c.a.clone(),
                b: c.b,
                within: vec![],
            })
            .collect(),
        (PartitionSpec::UnionHalfSpaces { constraints }, _) => (0..constraints.len())
            .map(|j| Piece::Hyperplane {
                a: constraints[j].a.clone(),
                b: constraints[j].b,
                within: constraints
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j)
                    .map(|(_, c)| c.clone())
                    .collect(),
            })
            .collect(),
    })
}

fn kl(m: &SpefModel, mu: f64, nu: f64) -> f64 {
    if !m.mean_domain().contains(nu) {
        return f64::INFINITY;
    }
    m.kl(mu, nu).unwrap_or(f64::INFINITY)
}

/// `[nu_lo, nu_hi]` with `K(mu | nu) <= level` at both ends, clipped to the domain.
fn kl_range(m: &SpefModel, mu: f64, level: f64) -> (f64, f64) {
    let d = m.mean_domain();
    let eps = 1e-12;
    let lo = m
        .kl_inverse(mu, level, KlSide::Below)
        .unwrap_or(if d.is_bounded_below() {
            d.lower + eps
        } else {
            f64::MIN
        });
    let hi = m
        .kl_inverse(mu, level, KlSide::Above)
        .unwrap_or(if d.is_bounded_above() {
            d.upper - eps
        } else {
            f64::MAX
        });
    (lo, hi)
}

fn reaches(models: &[SpefModel], mu: &[f64], piece: &Piece, level: f64) -> bool {
    let ranges: Vec<(f64, f64)> = models
        .iter()
        .zip(mu)
        .map(|(m, &x)| kl_range(m, x, level))
        .collect();
    match piece {
        Piece::Hyperplane { a, b, .. } => {
            let (mut lo, mut hi) = (0.0, 0.0);
            for (ai, r) in a.iter().zip(&ranges) {
                let (p, q) = (ai * r.0, ai * r.1);
                lo += p.min(q);
                hi += p.max(q);
            }
            lo <= *b && *b <= hi
        }
        Piece::RaiseOne { arm, u } => ranges[*arm].1 >= *u,
        Piece::LowerAll { u } => ranges.iter().all(|r| r.0 <= *u),
        Piece::Ellipsoid { center, q, c } => {
            let v: f64 = (0..mu.len())
                .map(|i| {
                    let x = center[i].clamp(ranges[i].0, ranges[i].1);
                    q[i] * (x - center[i]).powi(2)
                })
                .sum();
            v <= *c
        }
    }
}

/// Coarse-to-fine grid minimization over a box in `dim <= 2` parameters.
fn zoom_min(ranges: &[(f64, f64)], points: usize, rel_step: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    if ranges.is_empty() {
        return f(&[]);
    }
    let mut box_ = ranges.to_vec();
    let mut best = f64::INFINITY;
    let widths: Vec<f64> = ranges.iter().map(|r| r.1 - r.0).collect();
    for _ in 0..40 {
        let steps: Vec<f64> = box_
            .iter()
            .map(|r| (r.1 - r.0) / (points - 1) as f64)
            .collect();
        let mut arg = vec![0.0; box_.len()];
        let mut x = vec![0.0; box_.len()];
        let total = points.pow(box_.len() as u32);
        let mut round_best = f64::INFINITY;
        for n in 0..total {
            let mut m = n;
            for d in 0..box_.len() {
                x[d] = box_[d].0 + steps[d] * (m % points) as f64;
                m /= points;
            }
            let v = f(&x);
            if v < round_best {
                round_best = v;
                arg.copy_from_slice(&x);
            }
        }
        best = best.min(round_best);
        if !round_best.is_finite() {
            break;
        }
        if steps
            .iter()
            .zip(&widths)
            .all(|(s, w)| *s <= rel_step * 1e-3 * w)
        {
            break;
        }
        for d in 0..box_.len() {
            box_[d] = (
                (arg[d] - 2.0 * steps[d]).max(ranges[d].0),
                (arg[d] + 2.0 * steps[d]).min(ranges[d].1),
            );
        }
    }
    best
}

impl Instance<'_> {
    fn search_level(&self, w: &[f64], i: usize) -> f64 {
        self.grid.box_halfwidth * self.level / w[i].max(0.01)
    }

    fn cost(&self, w: &[f64], nu: &[f64]) -> f64 {
        (0..nu.len())
            .filter(|&i| w[i] > 0.0)
            .map(|i| w[i] * kl(&self.models[i], self.mu[i], nu[i]))
            .sum()
    }

    fn piece_inf(&self, w: &[f64], piece: &Piece) -> f64 {
        let (models, mu) = (self.models, self.mu);
        let k = mu.len();
        let step = self.grid.boundary_step;
        match piece {
            Piece::LowerAll { u } => (0..k)
                .filter(|&i| mu[i] > *u && w[i] > 0.0)
                .map(|i| {
                    let (lo, _) = kl_range(&models[i], mu[i], self.search_level(w, i));
                    let lo = lo.min(*u);
                    zoom_min(&[(lo, *u)], 101, step, &|x| {
                        w[i] * kl(&models[i], mu[i], x[0])
                    })
                })
                .sum(),
            Piece::RaiseOne { arm, u } => {
                let i = *arm;
                if w[i] == 0.0 || mu[i] >= *u {
                    return 0.0;
                }
                let (_, hi) = kl_range(&models[i], mu[i], self.search_level(w, i));
                let hi = hi.max(*u);
                zoom_min(&[(*u, hi)], 101, step, &|x| {
                    w[i] * kl(&models[i], mu[i], x[0])
                })
            }
            Piece::Hyperplane { a, b, within } => {
                let pivot = (0..k)
                    .max_by(|&p, &q| a[p].abs().total_cmp(&a[q].abs()))
                    .expect("non-empty");
                let free: Vec<usize> = (0..k).filter(|&i| i != pivot && a[i] != 0.0).collect();
                let ranges: Vec<(f64, f64)> = free
                    .iter()
                    .map(|&i| kl_range(&models[i], mu[i], self.search_level(w, i)))
                    .collect();
                let point = |x: &[f64]| -> Vec<f64> {
                    let mut nu = mu.to_vec();
                    let mut rest = *b;
                    for (d, &i) in free.iter().enumerate() {
                        nu[i] = x[d];
                        rest -= a[i] * x[d];
                    }
                    nu[pivot] = rest / a[pivot];
                    nu
                };
                zoom_min(&ranges, 101, step, &|x| {
                    let nu = point(x);
                    if within.iter().any(|c| c.dot(&nu) > c.b + 1e-12) {
                        return f64::INFINITY;
                    }
                    self.cost(w, &nu)
                })
            }
            Piece::Ellipsoid { center, q, c } => {
                let r: Vec<f64> = q.iter().map(|qi| (c / qi).sqrt()).collect();
                let point = |x: &[f64]| -> Vec<f64> {
                    let dir: Vec<f64> = match k {
                        1 => vec![if x[0] < 0.5 { -1.0 } else { 1.0 }],
                        2 => vec![x[0].cos(), x[0].sin()],
                        _ => vec![x[0].sin() * x[1].cos(), x[0].sin() * x[1].sin(), x[0].cos()],
                    };
                    (0..k).map(|i| center[i] + r[i] * dir[i]).collect()
                };
                let tau = std::f64::consts::TAU;
                let ranges: Vec<(f64, f64)> = match k {
                    1 => vec![(0.0, 1.0)],
                    2 => vec![(0.0, tau)],
                    _ => vec![(0.0, tau / 2.0), (0.0, tau)],
                };
                let points = if k == 1 { 2 } else { 181 };
                zoom_min(&ranges, points, step, &|x| self.cost(w, &point(x)))
            }
        }
    }

    fn inner(&self, w: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|p| self.piece_inf(w, p))
            .fold(f64::INFINITY, f64::min)
    }
}

fn instance<'a>(
    models: &'a [SpefModel],
    mu: &'a [f64],
    spec: &PartitionSpec,
    grid: GridSpec,
) -> Result<Instance<'a>> {
    if models.len() != mu.len() {
        return Err(OracleError::LengthMismatch {
            arms: models.len(),
            means: mu.len(),
        });
    }
    if mu.len() > 3 {
        return Err(OracleError::TooManyArms(mu.len()));
    }
    let pieces = pieces_for(spec, mu)?;
    let mut level = 1e-8;
    while !pieces.iter().any(|p| reaches(models, mu, p, level)) {
        level *= 2.0;
        if level > 1e12 {
            return Err(OracleError::Unreachable);
        }
    }
    Ok(Instance {
        models,
        mu,
        pieces,
        level,
        grid,
    })
}

/// Grid approximation of `inf_{nu in alternative} sum_i w_i K_i(mu_i | nu_i)`.
pub fn brute_force_inner(
    models: &[SpefModel],
    mu: &[f64],
    weights: &[f64],
    spec: &PartitionSpec,
    grid: GridSpec,
) -> Result<f64> {
    let inst = instance(models, mu, spec, grid)?;
    Ok(inst.inner(weights))
}

/// Exhaustive maximization of the gridded inner infimum over a gridded simplex.
pub fn brute_force_lb(
    models: &[SpefModel],
    mu: &[f64],
    spec: &PartitionSpec,
    grid: GridSpec,
) -> Result<OracleEstimate> {
    let inst = instance(models, mu, spec, grid)?;
    let k = mu.len();
    let n = (1.0 / grid.simplex_step_for(k)).round() as usize;
    let simplex: Vec<Vec<f64>> = match k {
        1 => vec![vec![1.0]],
        2 => (0..=n)
            .map(|i| vec![i as f64 / n as f64, (n - i) as f64 / n as f64])
            .collect(),
        _ => (0..=n)
            .flat_map(|i| (0..=n - i).map(move |j| (i, j)))
            .map(|(i, j)| {
                let nf = n as f64;
                vec![i as f64 / nf, j as f64 / nf, (n - i - j) as f64 / nf]
            })
            .collect(),
    };
    let values: Vec<f64> = simplex.par_iter().map(|w| inst.inner(w)).collect();
    let (best, c_star) = values
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        );
    Ok(OracleEstimate {
        c_star,
        w_star: simplex[best].clone(),
    })
}
