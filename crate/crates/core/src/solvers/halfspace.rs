use crate::partitions::{dot, HalfSpace, PartitionSpec, Side};
use crate::spef::{bisect_increasing, KlSide, SpefModel};

use super::{
    arm_err, bisect_fallible, check_instance, side_of, weighted_kl, InnerSolution,
    LowerBoundSolution, Result, SolverError,
};

const MAX_DOUBLINGS: usize = 200;
const MAX_SWEEPS: usize = 20_000;

/// Orients `(a, b)` so that the alternative is `{<a, nu> >= b}`.
pub(super) fn oriented(a: &[f64], b: f64, side: Side) -> (Vec<f64>, f64) {
    match side {
        Side::A2 => (a.iter().map(|x| -x).collect(), -b),
        _ => (a.to_vec(), b),
    }
}

/// Closure-of-domain end that coordinate `i` moves toward to increase `a_i nu_i`.
fn favourable_end(model: &SpefModel, a: f64) -> f64 {
    let d = model.mean_domain();
    if a > 0.0 {
        d.upper
    } else {
        d.lower
    }
}

/// Solves the half-space problem `A1 = {<a, nu> < b}` on either side.
///
/// At the optimum every arm has the same KL cost `C*` to reach `nu*`, which
/// sits on the hyperplane with `nu*_i - mu_i` of the sign of `a_i`. The
/// common level is found by bisection: the map
/// `L -> sum_i a_i nu_i(L)`, where `nu_i(L)` moves arm `i` in the direction
/// of `a_i` to KL level `L`, is strictly increasing.
pub fn solve_halfspace(
    models: &[SpefModel],
    mu: &[f64],
    a: &[f64],
    b: f64,
) -> Result<LowerBoundSolution> {
    check_instance(models, mu)?;
    let spec = PartitionSpec::half_space(a.to_vec(), b);
    let (a_or, b_or) = oriented(a, b, side_of(&spec, mu)?);

    let sup: f64 = models
        .iter()
        .zip(&a_or)
        .map(|(m, &ai)| ai * favourable_end(m, ai))
        .sum();
    if sup <= b_or {
        return Err(SolverError::InfeasibleAlternative);
    }

    let nu_at = |level: f64| -> Result<Vec<f64>> {
        models
            .iter()
            .zip(mu.iter().zip(&a_or))
            .enumerate()
            .map(|(i, (m, (&x, &ai)))| {
                let side = if ai > 0.0 {
                    KlSide::Above
                } else {
                    KlSide::Below
                };
                m.kl_inverse(x, level, side).map_err(arm_err(i))
            })
            .collect()
    };
    let h = |level: f64| -> Result<f64> { Ok(dot(&a_or, &nu_at(level)?)) };

    let mut hi = 1.0;
    let mut found = false;
    for _ in 0..MAX_DOUBLINGS {
        if h(hi)? >= b_or {
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
            let v = h(l)?;
            Ok(v - b_or)
        },
        0.0,
        hi,
    )?;
    let nu = nu_at(level)?;

    let raw: Vec<f64> = models
        .iter()
        .zip(mu.iter().zip(&nu))
        .zip(&a_or)
        .map(|((m, (&x, &y)), &ai)| ai / m.kl_dnu_unchecked(x, y))
        .collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let c_star = weighted_kl(models, mu, &w, &nu);

    let kls = super::kl_vector(models, mu, &nu);
    let equal_kl = kls.iter().map(|k| (k - kls[0]).abs()).fold(0.0, f64::max);
    let sign = nu
        .iter()
        .zip(mu)
        .zip(&a_or)
        .filter(|((&y, &x), &ai)| (y - x) * ai <= 0.0)
        .count() as f64;
    let balance: Vec<f64> = models
        .iter()
        .enumerate()
        .map(|(i, m)| w[i] * m.kl_dnu_unchecked(mu[i], nu[i]) / a_or[i])
        .collect();
    let spread = balance.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - balance.iter().cloned().fold(f64::INFINITY, f64::min);

    let mut sol = LowerBoundSolution::new(w, nu.clone(), c_star)
        .residual("equal_kl", equal_kl)
        .residual("hyperplane", (dot(a, &nu) - b).abs())
        .residual("sign", sign)
        .residual("weight_balance", spread);
    sol.active_set = (0..mu.len()).collect();
    Ok(sol)
}

/// `inf { sum_i w_i K_i(mu_i | nu_i) : <a, nu> >= b }` for `<a, mu> < b`.
///
/// Stationarity gives `nu_i = h_i(lambda a_i / w_i)` with `h_i` the inverse
/// of the KL derivative; the multiplier is found by bisection on the
/// increasing map `lambda -> sum_i a_i h_i(lambda a_i / w_i)`. Coordinates
/// with zero weight move for free to the end of their domain.
pub(crate) fn inner(
    models: &[SpefModel],
    mu: &[f64],
    w: &[f64],
    a: &[f64],
    b: f64,
) -> Result<InnerSolution> {
    let k = mu.len();
    let mut target = b;
    let mut has_free = false;
    for i in 0..k {
        if w[i] == 0.0 && a[i] != 0.0 {
            let end = favourable_end(&models[i], a[i]);
            if end.is_infinite() {
                return Ok(InnerSolution {
                    value: 0.0,
                    minimizer: None,
                });
            }
            target -= a[i] * end;
            has_free = true;
        }
    }
    let active: Vec<usize> = (0..k).filter(|&i| w[i] > 0.0 && a[i] != 0.0).collect();
    let base: f64 = active.iter().map(|&i| a[i] * mu[i]).sum();
    if base >= target {
        return Ok(InnerSolution {
            value: 0.0,
            minimizer: None,
        });
    }
    if active.is_empty() {
        return Err(SolverError::InfeasibleAlternative);
    }

    let nu_at = |lambda: f64| -> Vec<f64> {
        (0..k)
            .map(|i| {
                if active.contains(&i) {
                    models[i].kl_dnu_inverse_saturating(mu[i], lambda * a[i] / w[i])
                } else if w[i] == 0.0 && a[i] != 0.0 {
                    favourable_end(&models[i], a[i])
                } else {
                    mu[i]
                }
            })
            .collect()
    };
    let f = |lambda: f64| -> f64 {
        let nu = nu_at(lambda);
        active.iter().map(|&i| a[i] * nu[i]).sum::<f64>() - target
    };

    let mut hi = 1.0;
    let mut found = false;
    for _ in 0..MAX_DOUBLINGS {
        if f(hi) >= 0.0 {
            found = true;
            break;
        }
        hi *= 2.0;
    }
    if !found {
        return Err(SolverError::InfeasibleAlternative);
    }
    let lambda = bisect_increasing(f, 0.0, hi)?;
    let nu = nu_at(lambda);
    let value = weighted_kl(models, mu, w, &nu);
    Ok(InnerSolution {
        value,
        minimizer: if has_free { None } else { Some(nu) },
    })
}

/// `inf { sum_i w_i K_i(mu_i | nu_i) : <a_j, nu> <= b_j for all j }`, the
/// inner problem when the alternative is the closed polytope.
///
/// Dual coordinate ascent: each multiplier in turn is set to make its
/// constraint tight (or to zero if the constraint is slack), with the primal
/// point recovered from the stationarity condition. Zero weights are
/// replaced by a tiny fraction of the largest weight so the primal point
/// stays well defined.
pub(crate) fn inner_polytope(
    models: &[SpefModel],
    mu: &[f64],
    w: &[f64],
    constraints: &[HalfSpace],
) -> Result<InnerSolution> {
    let k = mu.len();
    let m = constraints.len();
    let w_max = w.iter().cloned().fold(0.0, f64::max);
    let w: Vec<f64> = w.iter().map(|&x| x.max(1e-12 * w_max)).collect();

    let nu_at = |lambda: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|i| {
                let s: f64 = (0..m).map(|j| lambda[j] * constraints[j].a[i]).sum();
                models[i].kl_dnu_inverse_saturating(mu[i], -s / w[i])
            })
            .collect()
    };
    let scale = constraints
        .iter()
        .map(|c| {
            c.b.abs()
                .max(c.a.iter().map(|x| x.abs()).fold(0.0, f64::max))
        })
        .fold(1.0, f64::max);

    let mut lambda = vec![0.0; m];
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut moved = 0.0f64;
        for j in 0..m {
            let slack = |lj: f64, lambda: &[f64]| -> f64 {
                let mut l = lambda.to_vec();
                l[j] = lj;
                constraints[j].b - dot(&constraints[j].a, &nu_at(&l))
            };
            let old = lambda[j];
            let new = if slack(0.0, &lambda) >= 0.0 {
                0.0
            } else {
                let mut hi = old.max(1.0);
                let mut ok = false;
                for _ in 0..MAX_DOUBLINGS {
                    if slack(hi, &lambda) >= 0.0 {
                        ok = true;
                        break;
                    }
                    hi *= 2.0;
                }
                if !ok {
                    return Err(SolverError::InfeasibleAlternative);
                }
                bisect_increasing(|l| slack(l, &lambda), 0.0, hi)?
            };
            lambda[j] = new;
            moved = moved.max((new - old).abs() / new.abs().max(1.0));
        }
        let nu = nu_at(&lambda);
        let violation = constraints
            .iter()
            .map(|c| c.dot(&nu) - c.b)
            .fold(0.0, f64::max);
        if moved <= 1e-13 && violation <= 1e-12 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolverError::NoConvergence {
            what: "polytope inner infimum",
        });
    }
    let nu = nu_at(&lambda);
    Ok(InnerSolution {
        value: weighted_kl(models, mu, &w, &nu),
        minimizer: Some(nu),
    })
}
