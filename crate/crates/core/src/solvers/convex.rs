use crate::partitions::{ConvexFunction, ConvexSublevel, PartitionSpec, Side, Term};
use crate::spef::{bisect_increasing, KlSide, SpefModel};

use super::{
    arm_err, bisect_fallible, check_instance, kl_vector, side_of, weighted_kl, InnerSolution,
    LowerBoundSolution, Result, SolverError, SolverSettings,
};

const MAX_DOUBLINGS: usize = 200;
const PG_MAX_ITERS: usize = 200_000;

/// Solves the lower-bound problem when `A2 = {f <= c}` is convex and `mu`
/// lies outside it.
///
/// The min-max point `nu* = argmin_{f(nu) <= c} max_i K_i(mu_i | nu_i)` is
/// found by bisection on the level `L`: the box of points within KL distance
/// `L` of `mu` in every coordinate meets `{f <= c}` exactly when `L >= C*`.
/// For balls, ellipsoids and linear `f` the minimum of `f` over a box is
/// available coordinate-wise; custom oracles use projected gradient descent.
///
/// Weights vanish off the active set `I` and, on it, are proportional to
/// `-df/dnu_i / K_i'(mu_i | nu*_i)`.
pub fn solve_convex(
    models: &[SpefModel],
    mu: &[f64],
    set: &ConvexSublevel,
    settings: &SolverSettings,
) -> Result<LowerBoundSolution> {
    check_instance(models, mu)?;
    if side_of(&PartitionSpec::ConvexSublevel { set: set.clone() }, mu)? != Side::A1 {
        return Err(SolverError::UnsupportedCase(
            "mean inside the convex set; the alternative is then non-convex".into(),
        ));
    }
    let k = mu.len();
    let terms = set.f.terms();

    if let Some(terms) = &terms {
        let low: f64 = terms
            .iter()
            .zip(models)
            .zip(mu)
            .map(|((t, m), &x)| {
                let d = m.mean_domain();
                t.value(t.argmin_on(d.lower, d.upper, x))
            })
            .sum();
        if !(low < set.c) {
            return Err(SolverError::InfeasibleAlternative);
        }
    }

    let bounds = |level: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut lo = Vec::with_capacity(k);
        let mut hi = Vec::with_capacity(k);
        for (i, (m, &x)) in models.iter().zip(mu).enumerate() {
            lo.push(m.kl_inverse(x, level, KlSide::Below).map_err(arm_err(i))?);
            hi.push(m.kl_inverse(x, level, KlSide::Above).map_err(arm_err(i))?);
        }
        Ok((lo, hi))
    };
    let min_on_box = |level: f64, start: &[f64]| -> Result<Vec<f64>> {
        let (lo, hi) = bounds(level)?;
        Ok(match &terms {
            Some(terms) => (0..k)
                .map(|i| terms[i].argmin_on(lo[i], hi[i], mu[i]))
                .collect(),
            None => {
                let f = &set.f;
                projected_gradient(|x| (f.value(x), f.gradient(x)), start, &lo, &hi)
            }
        })
    };

    let mut hi = 1.0;
    let mut found = false;
    for _ in 0..MAX_DOUBLINGS {
        if set.f.value(&min_on_box(hi, mu)?) <= set.c {
            found = true;
            break;
        }
        hi *= 2.0;
    }
    if !found {
        return Err(SolverError::InfeasibleAlternative);
    }
    let level = bisect_fallible(
        |l| {
            let x = min_on_box(l, mu)?;
            Ok(set.c - set.f.value(&x))
        },
        0.0,
        hi,
    )?;
    let nu = min_on_box(level, mu)?;

    let kls = kl_vector(models, mu, &nu);
    let c_max = kls.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..k)
        .filter(|&i| kls[i] >= c_max * (1.0 - settings.active_set_tol))
        .collect();
    let grad = set.f.gradient(&nu);

    if terms.is_none() && !smooth_at(&set.f, &nu, &active, &grad) {
        return Err(SolverError::NonUniqueHyperplane {
            nu_star: nu,
            c_star: c_max,
        });
    }
    let mut w = vec![0.0; k];
    for &i in &active {
        w[i] = -grad[i] / models[i].kl_dnu_unchecked(mu[i], nu[i]);
    }
    let total: f64 = w.iter().sum();
    let scale = w.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if !(total > 0.0) || w.iter().any(|&x| x < -1e-6 * scale) {
        return Err(SolverError::NonUniqueHyperplane {
            nu_star: nu,
            c_star: c_max,
        });
    }
    for x in w.iter_mut() {
        *x = x.max(0.0) / total;
    }
    let c_star = weighted_kl(models, mu, &w, &nu);

    let inactive_gradient = (0..k)
        .filter(|i| !active.contains(i))
        .map(|i| grad[i].abs())
        .fold(0.0, f64::max);
    let saddle = inner(models, mu, &w, set).map(|s| (s.value - c_star).abs())?;
    let mut sol = LowerBoundSolution::new(w, nu.clone(), c_star)
        .residual("sublevel", (set.f.value(&nu) - set.c).abs())
        .residual("max_kl_gap", (c_max - c_star).abs())
        .residual("inactive_gradient", inactive_gradient)
        .residual("saddle", saddle);
    sol.active_set = active;
    Ok(sol)
}

/// One-sided difference quotients agree along every active coordinate.
fn smooth_at(f: &ConvexFunction, x: &[f64], active: &[usize], grad: &[f64]) -> bool {
    let fx = f.value(x);
    active.iter().all(|&i| {
        let h = 1e-6 * x[i].abs().max(1.0);
        let mut y = x.to_vec();
        y[i] = x[i] + h;
        let forward = (f.value(&y) - fx) / h;
        y[i] = x[i] - h;
        let backward = (fx - f.value(&y)) / h;
        (forward - backward).abs() <= 1e-3 * grad[i].abs().max(1.0)
    })
}

/// Minimizes a convex function over the box `[lo, hi]` by projected
/// gradient descent with backtracking, finishing with cutting planes if the
/// line search stalls (as it does at kinks of a non-smooth function).
fn projected_gradient(
    obj: impl Fn(&[f64]) -> (f64, Vec<f64>),
    start: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Vec<f64> {
    let project = |x: Vec<f64>| -> Vec<f64> {
        x.into_iter()
            .enumerate()
            .map(|(i, v)| v.clamp(lo[i], hi[i]))
            .collect()
    };
    let mut x = project(start.to_vec());
    let (mut fx, mut g) = obj(&x);
    let mut step = 1.0;
    for _ in 0..PG_MAX_ITERS {
        let mut accepted = false;
        for _ in 0..60 {
            let y = project(x.iter().zip(&g).map(|(a, b)| a - step * b).collect());
            let (fy, gy) = obj(&y);
            let d2: f64 = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            let decrease: f64 = g
                .iter()
                .zip(y.iter().zip(&x))
                .map(|(gi, (a, b))| gi * (a - b))
                .sum();
            if fy.is_finite() && fy <= fx + decrease + d2 / (2.0 * step) {
                let moved = d2.sqrt();
                let scale = x.iter().map(|v| v.abs()).fold(1.0, f64::max);
                x = y;
                fx = fy;
                g = gy;
                step *= 2.0;
                accepted = true;
                if moved <= 1e-15 * scale {
                    // Tiny steps are either convergence or a kink.
                    let unit = project(x.iter().zip(&g).map(|(a, b)| a - b).collect());
                    let residual = unit
                        .iter()
                        .zip(&x)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    if residual <= 1e-9 * scale {
                        return x;
                    }
                    return cutting_planes_on_box(&obj, x, lo, hi);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return cutting_planes_on_box(&obj, x, lo, hi);
        }
    }
    x
}

/// Kelley's method on a bounded box: minimize the piecewise-linear model
/// `max_k f(x_k) + <g_k, x - x_k>` by LP and evaluate at its minimizer.
fn cutting_planes_on_box(
    obj: &impl Fn(&[f64]) -> (f64, Vec<f64>),
    start: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
) -> Vec<f64> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};

    if lo.iter().chain(hi).any(|v| !v.is_finite()) {
        return start;
    }
    let (f0, g0) = obj(&start);
    let mut cuts = vec![(start.clone(), f0, g0)];
    let mut best = (start, f0);
    for _ in 0..500 {
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let z = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
        let xs: Vec<_> = (0..lo.len())
            .map(|i| lp.add_var(0.0, (lo[i], hi[i])))
            .collect();
        for (xk, fk, gk) in &cuts {
            // z - <g, x> >= f(x_k) - <g, x_k>
            let mut row = vec![(z, 1.0)];
            row.extend(xs.iter().zip(gk).map(|(&v, &gi)| (v, -gi)));
            let rhs = fk - gk.iter().zip(xk).map(|(a, b)| a * b).sum::<f64>();
            lp.add_constraint(row.as_slice(), ComparisonOp::Ge, rhs);
        }
        let Some(sol) = lp.solve().ok().and_then(|o| o.into_solution().ok()) else {
            break;
        };
        let lower = sol.var_value(z);
        let x: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, &v)| sol.var_value(v).clamp(lo[i], hi[i]))
            .collect();
        let (fx, gx) = obj(&x);
        if fx < best.1 {
            best = (x.clone(), fx);
        }
        if best.1 - lower <= 1e-12 * best.1.abs().max(1.0) {
            break;
        }
        cuts.push((x, fx, gx));
    }
    best.0
}

/// Coordinate minimizer of `w K(mu | x) + lambda * term(x)` for `w > 0`.
fn separable_step(model: &SpefModel, mu: f64, w: f64, term: &Term, lambda: f64) -> Result<f64> {
    match *term {
        Term::Linear { coef } => Ok(model.kl_dnu_inverse_saturating(mu, -lambda * coef / w)),
        Term::Quadratic { center, weight } => {
            if lambda == 0.0 || weight == 0.0 || center == mu {
                return Ok(mu);
            }
            if let SpefModel::Gaussian { variance } = *model {
                let p = w / variance;
                let q = 2.0 * lambda * weight;
                return Ok((p * mu + q * center) / (p + q));
            }
            let d = model.mean_domain();
            let c = center.clamp(d.lower, d.upper);
            let (lo, hi) = if c < mu { (c, mu) } else { (mu, c) };
            let g =
                |x: f64| w * model.kl_dnu_unchecked(mu, x) + 2.0 * lambda * weight * (x - center);
            Ok(bisect_increasing(g, lo, hi)?)
        }
    }
}

/// `inf { sum_i w_i K_i(mu_i | nu_i) : f(nu) <= c }` for `f(mu) > c`.
///
/// Lagrangian relaxation: for each multiplier the relaxed problem is solved
/// coordinate-wise (separable `f`) or by projected gradient (custom oracle),
/// and the multiplier is bisected until the constraint is tight.
pub(crate) fn inner(
    models: &[SpefModel],
    mu: &[f64],
    w: &[f64],
    set: &ConvexSublevel,
) -> Result<InnerSolution> {
    let k = mu.len();
    match set.f.terms() {
        Some(terms) => {
            // Zero-weight coordinates go straight to the minimizer of their term.
            let mut free = vec![None; k];
            for i in 0..k {
                if w[i] == 0.0 {
                    let d = models[i].mean_domain();
                    let x = terms[i].argmin_on(d.lower, d.upper, mu[i]);
                    if x.is_infinite() {
                        return Ok(InnerSolution {
                            value: 0.0,
                            minimizer: None,
                        });
                    }
                    free[i] = Some(x);
                }
            }
            let nu_at = |lambda: f64| -> Result<Vec<f64>> {
                (0..k)
                    .map(|i| match free[i] {
                        Some(x) => Ok(x),
                        None => separable_step(&models[i], mu[i], w[i], &terms[i], lambda),
                    })
                    .collect()
            };
            let attained = |nu: Vec<f64>| -> Option<Vec<f64>> {
                nu.iter()
                    .zip(models)
                    .all(|(&x, m)| m.mean_domain().contains(x))
                    .then_some(nu)
            };
            let nu0 = nu_at(0.0)?;
            if set.f.value(&nu0) <= set.c {
                return Ok(InnerSolution {
                    value: 0.0,
                    minimizer: attained(nu0),
                });
            }
            let mut hi = 1.0;
            let mut found = false;
            for _ in 0..MAX_DOUBLINGS {
                if set.f.value(&nu_at(hi)?) <= set.c {
                    found = true;
                    break;
                }
                hi *= 2.0;
            }
            if !found {
                return Err(SolverError::InfeasibleAlternative);
            }
            let lambda = bisect_fallible(
                |l| {
                    let nu = nu_at(l)?;
                    Ok(set.c - set.f.value(&nu))
                },
                0.0,
                hi,
            )?;
            let nu = nu_at(lambda)?;
            Ok(InnerSolution {
                value: weighted_kl(models, mu, w, &nu),
                minimizer: attained(nu),
            })
        }
        None => inner_generic(models, mu, w, set),
    }
}

fn inner_generic(
    models: &[SpefModel],
    mu: &[f64],
    w: &[f64],
    set: &ConvexSublevel,
) -> Result<InnerSolution> {
    let lo: Vec<f64> = models.iter().map(|m| m.mean_domain().lower).collect();
    let hi: Vec<f64> = models.iter().map(|m| m.mean_domain().upper).collect();
    // Keep iterates strictly inside bounded domains.
    let shrink = |v: f64, toward: f64| {
        if v.is_finite() {
            v + 1e-12 * (toward - v)
        } else {
            v
        }
    };
    let lo: Vec<f64> = lo.iter().zip(mu).map(|(&l, &x)| shrink(l, x)).collect();
    let hi: Vec<f64> = hi.iter().zip(mu).map(|(&h, &x)| shrink(h, x)).collect();

    let relaxed = |lambda: f64, start: &[f64]| -> Vec<f64> {
        projected_gradient(
            |x| {
                let mut value = lambda * set.f.value(x);
                let mut grad: Vec<f64> = set.f.gradient(x).iter().map(|g| lambda * g).collect();
                for i in 0..x.len() {
                    if w[i] > 0.0 {
                        value += w[i] * models[i].kl_unchecked(mu[i], x[i]);
                        grad[i] += w[i] * models[i].kl_dnu_unchecked(mu[i], x[i]);
                    }
                }
                (value, grad)
            },
            start,
            &lo,
            &hi,
        )
    };

    let mut hi_l = 1.0;
    let mut found = false;
    for _ in 0..60 {
        if set.f.value(&relaxed(hi_l, mu)) <= set.c {
            found = true;
            break;
        }
        hi_l *= 2.0;
    }
    if !found {
        return Err(SolverError::InfeasibleAlternative);
    }
    let lambda = bisect_increasing(|l| set.c - set.f.value(&relaxed(l, mu)), 0.0, hi_l)?;
    let nu = relaxed(lambda, mu);
    Ok(InnerSolution {
        value: weighted_kl(models, mu, w, &nu),
        minimizer: Some(nu),
    })
}
