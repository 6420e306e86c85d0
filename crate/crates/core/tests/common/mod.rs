#![allow(dead_code)]

use partid::partitions::{classify, HalfSpace, PartitionSpec, Side};
use partid::solvers::{solve_halfspace, LowerBoundSolution};
use partid::spef::{KlSide, SpefModel};
use rand::Rng;

pub const G1: SpefModel = SpefModel::Gaussian { variance: 1.0 };

pub fn random_model<R: Rng>(rng: &mut R) -> SpefModel {
    match rng.gen_range(0..3) {
        0 => SpefModel::Gaussian {
            variance: rng.gen_range(0.25..4.0),
        },
        1 => SpefModel::Bernoulli,
        _ => SpefModel::Poisson,
    }
}

pub fn random_mean<R: Rng>(model: SpefModel, rng: &mut R) -> f64 {
    match model {
        SpefModel::Gaussian { .. } => rng.gen_range(-2.0..2.0),
        SpefModel::Bernoulli => rng.gen_range(0.1..0.9),
        SpefModel::Poisson => rng.gen_range(0.2..5.0),
    }
}

pub struct HalfSpaceInstance {
    pub models: Vec<SpefModel>,
    pub mu: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
}

/// Random mixed-family half-space instance with a reachable alternative.
pub fn random_halfspace<R: Rng>(rng: &mut R, k: usize) -> (HalfSpaceInstance, LowerBoundSolution) {
    loop {
        let models: Vec<SpefModel> = (0..k).map(|_| random_model(rng)).collect();
        let mu: Vec<f64> = models.iter().map(|&m| random_mean(m, rng)).collect();
        let a: Vec<f64> = (0..k)
            .map(|_| rng.gen_range(0.3..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let offset = rng.gen_range(0.05..0.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let b = a.iter().zip(&mu).map(|(x, y)| x * y).sum::<f64>() + offset;
        if let Ok(sol) = solve_halfspace(&models, &mu, &a, b) {
            return (HalfSpaceInstance { models, mu, a, b }, sol);
        }
    }
}

/// Independent first-order optimality check for a half-space solution:
/// equal divergences, the point on the hyperplane, moves towards the
/// alternative, and weights balancing `a_i / K_i'`.
pub fn halfspace_kkt_violation(inst: &HalfSpaceInstance, sol: &LowerBoundSolution) -> f64 {
    let nu = &sol.nu_star;
    let kls: Vec<f64> = inst
        .models
        .iter()
        .zip(&inst.mu)
        .zip(nu)
        .map(|((m, &x), &y)| m.kl(x, y).unwrap())
        .collect();
    let level = sol.c_star;
    let equal_kl = kls.iter().map(|&k| (k - level).abs()).fold(0.0, f64::max) / level.max(1.0);

    let scale: f64 = inst.a.iter().map(|x| x.abs()).sum();
    let hyper = (inst.a.iter().zip(nu).map(|(x, y)| x * y).sum::<f64>() - inst.b).abs() / scale;

    // Direction from mu to the alternative.
    let side = classify(&PartitionSpec::half_space(inst.a.clone(), inst.b), &inst.mu).unwrap();
    let orient = if side == Side::A2 { -1.0 } else { 1.0 };
    let sign = (0..inst.mu.len())
        .map(|i| (-(nu[i] - inst.mu[i]) * inst.a[i] * orient).max(0.0))
        .fold(0.0, f64::max);

    let ratios: Vec<f64> = (0..inst.mu.len())
        .map(|i| sol.w_star[i] * inst.models[i].kl_dnu(inst.mu[i], nu[i]).unwrap() / inst.a[i])
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let balance = ratios.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max) / mean.abs();
    equal_kl.max(hyper).max(sign).max(balance)
}

pub fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// `(mu, a1, b1, a2, b2, variance)` for two Gaussian arms whose optimum
/// touches both lines.
pub fn random_double_tangency<R: Rng>(rng: &mut R) -> ([f64; 2], HalfSpace, HalfSpace, f64) {
    let mu = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let a1 = [rng.gen_range(1.5..3.0), rng.gen_range(0.5..1.0)];
    let a2 = [rng.gen_range(0.5..1.0), rng.gen_range(1.5..3.0)];
    let r = rng.gen_range(0.5..1.5);
    let b1 = a1[0] * mu[0] + a1[1] * mu[1] + r;
    let b2 = a2[0] * mu[0] + a2[1] * mu[1] + r * rng.gen_range(0.9..1.1);
    (
        mu,
        HalfSpace::new(a1.to_vec(), b1),
        HalfSpace::new(a2.to_vec(), b2),
        rng.gen_range(0.25..2.0),
    )
}

/// Closed-form Gaussian half-space value with common variance:
/// `(b - <a, mu>)^2 / (2 variance (sum |a_i|)^2)`.
pub fn gaussian_halfspace_c(mu: &[f64], a: &[f64], b: f64, variance: f64) -> f64 {
    let gap = b - a.iter().zip(mu).map(|(x, y)| x * y).sum::<f64>();
    let s: f64 = a.iter().map(|x| x.abs()).sum();
    gap * gap / (2.0 * variance * s * s)
}

pub fn inverse_side(mu: f64, nu: f64) -> KlSide {
    if nu >= mu {
        KlSide::Above
    } else {
        KlSide::Below
    }
}

fn near(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Randomized properties of the divergence calculus for one family: returns
/// the first violated property.
pub fn kl_property_suite<R: Rng>(family: &str, cases: usize, rng: &mut R) -> Result<(), String> {
    for case in 0..cases {
        let model = match family {
            "gaussian" => SpefModel::Gaussian {
                variance: rng.gen_range(0.1..10.0),
            },
            "bernoulli" => SpefModel::Bernoulli,
            _ => SpefModel::Poisson,
        };
        let draw = |rng: &mut R| match model {
            SpefModel::Gaussian { .. } => rng.gen_range(-5.0..5.0),
            SpefModel::Bernoulli => rng.gen_range(0.01..0.99),
            SpefModel::Poisson => rng.gen_range(0.05..20.0),
        };
        let (mu, nu, other) = (draw(rng), draw(rng), draw(rng));
        let fail = |what: &str| Err(format!("{family} case {case}: {what} (mu={mu}, nu={nu})"));

        let k = model.kl(mu, nu).unwrap();
        if !(k >= 0.0) || model.kl(mu, mu).unwrap() != 0.0 {
            return fail("non-negativity");
        }
        // Strict convexity in the second argument.
        if (nu - other).abs() > 1e-3 {
            let mid = 0.5 * (nu + other);
            let lhs = model.kl(mu, mid).unwrap();
            let rhs = 0.5 * (k + model.kl(mu, other).unwrap());
            if !(lhs < rhs) {
                return fail("strict convexity");
            }
        }
        // Divergence towards the ends of the mean domain: strictly growing
        // along probes that approach each end.
        let d = model.mean_domain();
        let steps = [1e-3, 1e-6, 1e-9, 1e-15];
        for upper in [false, true] {
            let end = if upper { d.upper } else { d.lower };
            let probes: Vec<f64> = steps
                .iter()
                .map(|&e| match (end.is_finite(), upper) {
                    (true, true) => end - e,
                    (true, false) => end + e,
                    (false, true) => 1.0 / e,
                    (false, false) => -1.0 / e,
                })
                .collect();
            let kls: Vec<f64> = probes.iter().map(|&p| model.kl(mu, p).unwrap()).collect();
            if kls.windows(2).any(|w| !(w[1] > w[0])) || !(kls[3] > 4.0 * kls[0]) {
                return fail(&format!("boundary divergence {kls:?}"));
            }
        }
        // Derivative against a central difference.
        if (nu - mu).abs() > 1e-2 {
            let h = 1e-5 * nu.abs().max(1e-2);
            let fd = (model.kl(mu, nu + h).unwrap() - model.kl(mu, nu - h).unwrap()) / (2.0 * h);
            let an = model.kl_dnu(mu, nu).unwrap();
            if (fd - an).abs() > 1e-5 * an.abs().max(1e-3) {
                return fail(&format!("derivative {an} vs finite difference {fd}"));
            }
        }
        // Inverse round trips.
        let side = inverse_side(mu, nu);
        let back = model.kl_inverse(mu, k, side).unwrap();
        if !near(model.kl(mu, back).unwrap(), k, 1e-9) {
            return fail("kl_inverse round trip");
        }
        let slope = model.kl_dnu(mu, nu).unwrap();
        let back = model.kl_dnu_inverse(mu, slope).unwrap();
        if !near(back, nu, 1e-9) {
            return fail(&format!("kl_dnu_inverse round trip gave {back}"));
        }
    }
    Ok(())
}
