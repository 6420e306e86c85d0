use crate::partitions::{Side, TOL_CLASS};
use crate::spef::SpefModel;

use super::{arm_err, check_instance, InnerSolution, LowerBoundSolution, Result, SolverError};

fn check_threshold(models: &[SpefModel], u: f64) -> Result<()> {
    if !u.is_finite() {
        return Err(SolverError::InvalidInput(format!(
            "threshold {u} is not finite"
        )));
    }
    for (arm, m) in models.iter().enumerate() {
        m.check_mean(u).map_err(arm_err(arm))?;
    }
    Ok(())
}

fn side(mu: &[f64], u: f64) -> Result<Side> {
    let (arm, max) = mu
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        });
    if (max - u).abs() <= TOL_CLASS {
        Err(SolverError::DegenerateInstance { arm })
    } else if max > u {
        Ok(Side::A1)
    } else {
        Ok(Side::A2)
    }
}

/// `mu` with coordinate `s` replaced by `u`.
fn nu_at(mu: &[f64], s: usize, u: f64) -> Vec<f64> {
    let mut nu = mu.to_vec();
    nu[s] = u;
    nu
}

/// Closed-form solution for `A1 = {max_i nu_i > u}`.
///
/// Above the threshold all weight goes to the arm that is hardest to pull
/// down to `u`; below it, weights are inversely proportional to the cost of
/// pushing each arm up to `u`, and every `nu(s)` (arm `s` moved to `u`) is
/// an equally good alternative. `nu_star` is the lowest-index one.
pub fn solve_threshold(models: &[SpefModel], mu: &[f64], u: f64) -> Result<LowerBoundSolution> {
    check_instance(models, mu)?;
    check_threshold(models, u)?;
    let kls: Vec<f64> = models
        .iter()
        .zip(mu)
        .map(|(m, &x)| m.kl_unchecked(x, u))
        .collect();
    let k = mu.len();

    match side(mu, u)? {
        Side::A1 => {
            let mut best = None::<(usize, f64)>;
            for (i, (&x, &kl)) in mu.iter().zip(&kls).enumerate() {
                if x > u && best.is_none_or(|(_, b)| kl > b) {
                    best = Some((i, kl));
                }
            }
            let (j, c_star) = best.expect("some arm above the threshold");
            let mut w = vec![0.0; k];
            w[j] = 1.0;
            let nu: Vec<f64> = mu.iter().map(|&x| x.min(u)).collect();
            let mut sol = LowerBoundSolution::new(w, nu, c_star).residual("weight_sum", 0.0);
            sol.active_set = (0..k).filter(|&i| mu[i] > u && kls[i] == c_star).collect();
            Ok(sol)
        }
        _ => {
            let t_star: f64 = kls.iter().map(|kl| 1.0 / kl).sum();
            let w: Vec<f64> = kls.iter().map(|kl| 1.0 / (kl * t_star)).collect();
            let weight_sum = (w.iter().sum::<f64>() - 1.0).abs();
            let mut sol = LowerBoundSolution::new(w, nu_at(mu, 0, u), 1.0 / t_star)
                .residual("weight_sum", weight_sum);
            sol.t_star = t_star;
            sol.alternatives = (0..k).map(|s| nu_at(mu, s, u)).collect();
            sol.active_set = (0..k).collect();
            Ok(sol)
        }
    }
}

pub(super) fn inner(
    models: &[SpefModel],
    mu: &[f64],
    w: &[f64],
    u: f64,
    side: Side,
) -> Result<InnerSolution> {
    check_threshold(models, u)?;
    let cost = |i: usize| {
        if w[i] == 0.0 {
            0.0
        } else {
            w[i] * models[i].kl_unchecked(mu[i], u)
        }
    };
    match side {
        Side::A1 => Ok(InnerSolution {
            value: (0..mu.len()).filter(|&i| mu[i] > u).map(cost).sum(),
            minimizer: Some(mu.iter().map(|&x| x.min(u)).collect()),
        }),
        _ => {
            let mut best = (0, f64::INFINITY);
            for s in 0..mu.len() {
                let c = cost(s);
                if c < best.1 {
                    best = (s, c);
                }
            }
            Ok(InnerSolution {
                value: best.1,
                minimizer: Some(nu_at(mu, best.0, u)),
            })
        }
    }
}
