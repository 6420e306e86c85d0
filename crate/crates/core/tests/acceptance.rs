//! One line per acceptance criterion; the test fails if any criterion does.

mod common;

use std::time::{Duration, Instant};

use common::*;
use partid::harness::{
    cmd_mc, cmd_risk_demo, ExperimentConfig, FactorModel, PayoffMap, RiskDemoConfig,
};
use partid::oracle::{brute_force_lb, GridSpec};
use partid::partitions::{ConvexSublevel, HalfSpace, PartitionSpec};
use partid::solvers::{
    solve_convex, solve_halfspace, solve_lb, solve_threshold, solve_two_arm_gaussian,
    solve_union_halfspaces, SolverSettings, TwoArmCase,
};
use partid::spef::SpefModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn threshold_closed_form() -> Outcome {
    let start = Instant::now();
    let above = solve_threshold(&[G1, G1], &[2.0, 0.0], 1.0).map_err(|e| e.to_string())?;
    let below = solve_threshold(&[G1, G1], &[0.0, 0.0], 1.0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(
        close(above.w_star[0], 1.0, 1e-12)
            && close(above.w_star[1], 0.0, 1e-12)
            && close(above.t_star, 2.0, 1e-12),
        || format!("above: w={:?} T={}", above.w_star, above.t_star),
    )?;
    ensure(
        close(below.t_star, 4.0, 1e-12)
            && close(below.w_star[0], 0.5, 1e-12)
            && close(below.w_star[1], 0.5, 1e-12),
        || format!("below: w={:?} T={}", below.w_star, below.t_star),
    )?;
    ensure(elapsed < Duration::from_millis(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("T*=2 and T*=4 exact, {elapsed:?}"))
}

fn halfspace_kkt_suite() -> Outcome {
    let sym =
        solve_halfspace(&[G1, G1], &[0.0, 0.0], &[1.0, 1.0], 1.0).map_err(|e| e.to_string())?;
    ensure(
        sym.nu_star.iter().all(|&x| close(x, 0.5, 1e-8))
            && sym.w_star.iter().all(|&x| close(x, 0.5, 1e-8))
            && close(sym.c_star, 0.125, 1e-8),
        || format!("symmetric instance: {sym:?}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut slowest = Duration::ZERO;
    for n in 0..100 {
        let start = Instant::now();
        let (inst, sol) = random_halfspace(&mut rng, 2 + n % 3);
        slowest = slowest.max(start.elapsed());
        let reported = sol.kkt_residuals.values().cloned().fold(0.0, f64::max);
        worst = worst
            .max(reported)
            .max(halfspace_kkt_violation(&inst, &sol));
    }
    ensure(worst <= 1e-8, || format!("worst residual {worst:e}"))?;
    ensure(slowest < Duration::from_millis(50), || {
        format!("slowest {slowest:?}")
    })?;
    Ok(format!(
        "worst residual {worst:.1e} over 100 instances, slowest {slowest:?}"
    ))
}

fn random_two_arm_spec<R: Rng>(kind: usize, mu: &[f64], rng: &mut R) -> PartitionSpec {
    let sign = |rng: &mut R| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    match kind {
        0 => {
            let top = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            PartitionSpec::threshold(top + sign(rng) * rng.gen_range(0.1..0.6))
        }
        1 => {
            let a = vec![
                sign(rng) * rng.gen_range(0.5..2.0),
                sign(rng) * rng.gen_range(0.5..2.0),
            ];
            let b = a[0] * mu[0] + a[1] * mu[1] + sign(rng) * rng.gen_range(0.1..0.6);
            PartitionSpec::half_space(a, b)
        }
        2 => {
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.2..0.6);
            let d = r + rng.gen_range(0.2..0.6);
            let center = vec![mu[0] + d * dir.cos(), mu[1] + d * dir.sin()];
            PartitionSpec::convex(ConvexSublevel::ball(center, r).unwrap())
        }
        _ => {
            let mut h = |a: Vec<f64>| {
                let b = a[0] * mu[0] + a[1] * mu[1] + rng.gen_range(0.2..0.8);
                HalfSpace::new(a, b)
            };
            let a1 = vec![1.5, 0.6];
            let a2 = vec![0.6, 1.5];
            PartitionSpec::union(vec![h(a1), h(a2)])
        }
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for kind in 0..4 {
        let mut checked = 0;
        while checked < 20 {
            let models = [G1, SpefModel::Gaussian { variance: 0.5 }];
            let mu = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let spec = random_two_arm_spec(kind, &mu, &mut rng);
            let Ok(sol) = solve_lb(&models, &mu, &spec, &SolverSettings::default()) else {
                continue;
            };
            let est = brute_force_lb(&models, &mu, &spec, GridSpec::default())
                .map_err(|e| e.to_string())?;
            let diff = (sol.c_star - est.c_star).abs();
            ensure(diff <= 2e-3, || {
                format!(
                    "{}: solver {} vs grid {} at mu {mu:?}",
                    spec.kind(),
                    sol.c_star,
                    est.c_star
                )
            })?;
            worst = worst.max(diff);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "80 instances, worst |dC| {worst:.1e}, {elapsed:.1?}"
    ))
}

fn two_arm_three_cases() -> Outcome {
    let settings = SolverSettings::default();
    let g_half = SpefModel::Gaussian { variance: 0.5 };
    let h1 = HalfSpace::new(vec![2.0, 1.0], 1.0);
    let h2 = HalfSpace::new(vec![1.0, 2.0], 1.0);
    let both = solve_two_arm_gaussian([0.0, 0.0], &h1, &h2, 0.5).map_err(|e| e.to_string())?;
    let s = &both.solution;
    ensure(both.case == TwoArmCase::Both, || {
        format!("case {:?}", both.case)
    })?;
    ensure(
        close(s.w_star[0], 0.5, 1e-10) && close(s.c_star, 0.1, 1e-10),
        || format!("w={:?} C={}", s.w_star, s.c_star),
    )?;
    let expected = [[0.4, 0.2], [0.2, 0.4]];
    for ((p, e), h) in s.alternatives.iter().zip(expected).zip([&h1, &h2]) {
        let line = (h.dot(p) - h.b).abs();
        // Ellipse w1 K1 + w2 K2 = C with K_i = nu_i^2 / (2 * 0.5).
        let ellipse = (s.w_star[0] * p[0] * p[0] + s.w_star[1] * p[1] * p[1] - s.c_star).abs();
        ensure(
            line <= 1e-10
                && ellipse <= 1e-10
                && close(p[0], e[0], 1e-10)
                && close(p[1], e[1], 1e-10),
            || format!("tangency point {p:?}"),
        )?;
    }

    let far = HalfSpace::new(vec![1.0, 2.0], 10.0);
    let near = HalfSpace::new(vec![1.0, 1.0], 1.0);
    let closed = gaussian_halfspace_c(&[0.0, 0.0], &near.a, near.b, 0.5);
    let first = solve_two_arm_gaussian([0.0, 0.0], &near, &far, 0.5).map_err(|e| e.to_string())?;
    let second = solve_two_arm_gaussian([0.0, 0.0], &far, &near, 0.5).map_err(|e| e.to_string())?;
    ensure(
        first.case == TwoArmCase::FirstOnly && close(first.solution.c_star, closed, 1e-10),
        || format!("case 1: {:?} C={}", first.case, first.solution.c_star),
    )?;
    ensure(
        second.case == TwoArmCase::SecondOnly && close(second.solution.c_star, closed, 1e-10),
        || format!("case 2: {:?} C={}", second.case, second.solution.c_star),
    )?;

    let mut worst = 0.0f64;
    for (sol, pair) in [
        (&both, [h1.clone(), h2.clone()]),
        (&first, [near.clone(), far.clone()]),
        (&second, [far.clone(), near.clone()]),
    ] {
        let it = solve_union_halfspaces(&[g_half, g_half], &[0.0, 0.0], &pair, &settings)
            .map_err(|e| e.to_string())?;
        let diff = (it.c_star - sol.solution.c_star)
            .abs()
            .max((it.w_star[0] - sol.solution.w_star[0]).abs());
        worst = worst.max(diff);
    }
    ensure(worst <= 1e-6, || {
        format!("iterative solver off by {worst:e}")
    })?;
    Ok(format!(
        "three cases exact, iterative solver within {worst:.1e}"
    ))
}

fn convex_solver() -> Outcome {
    let settings = SolverSettings::default();
    let ball = ConvexSublevel::ball(vec![1.0, 1.0], 0.5f64.sqrt()).unwrap();
    let sol = solve_convex(&[G1, G1], &[0.0, 0.0], &ball, &settings).map_err(|e| e.to_string())?;
    ensure(
        sol.nu_star.iter().all(|&x| close(x, 0.5, 1e-6))
            && sol.w_star.iter().all(|&x| close(x, 0.5, 1e-6))
            && close(sol.c_star, 0.125, 1e-6)
            && sol.active_set == vec![0, 1],
        || format!("tangent ball: {sol:?}"),
    )?;
    let ball = ConvexSublevel::ball(vec![0.0, 2.0], 1.0).unwrap();
    let sol = solve_convex(&[G1, G1], &[0.0, 0.0], &ball, &settings).map_err(|e| e.to_string())?;
    ensure(
        close(sol.nu_star[0], 0.0, 1e-6)
            && close(sol.nu_star[1], 1.0, 1e-6)
            && close(sol.w_star[0], 0.0, 1e-6)
            && close(sol.c_star, 0.5, 1e-6)
            && sol.active_set == vec![1],
        || format!("single active arm: {sol:?}"),
    )?;
    let models = [SpefModel::Bernoulli, SpefModel::Poisson, G1];
    let mu = [0.3, 2.0, 0.0];
    let a = [1.0, -0.5, 2.0];
    let hs = solve_halfspace(&models, &mu, &a, 1.0).map_err(|e| e.to_string())?;
    let lin = solve_convex(
        &models,
        &mu,
        &ConvexSublevel::half_space(&a, 1.0),
        &settings,
    )
    .map_err(|e| e.to_string())?;
    let diff = (hs.c_star - lin.c_star).abs().max(
        hs.w_star
            .iter()
            .zip(&lin.w_star)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max),
    );
    ensure(diff <= 1e-6, || format!("linear f vs half-space: {diff:e}"))?;
    Ok(format!(
        "both balls within 1e-6, linear f matches half-space to {diff:.1e}"
    ))
}

fn experiment(
    means: [f64; 2],
    partition: PartitionSpec,
    deltas: Vec<f64>,
    replications: usize,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        arms: vec![G1; 2],
        true_means: means.to_vec(),
        partition,
        deltas,
        replications,
        seed,
        max_steps: 1_000_000,
        c_const: std::f64::consts::E,
        parallelism: 0,
    }
}

struct Campaigns {
    violations: u64,
    median_fraction: f64,
}

fn delta_pac(campaigns: &mut Campaigns) -> Outcome {
    let mut summary = Vec::new();
    for (delta, reps, seed) in [(0.1, 500, 61), (0.01, 1000, 62)] {
        let cfg = experiment(
            [2.0, 0.0],
            PartitionSpec::threshold(1.0),
            vec![delta],
            reps,
            seed,
        );
        let out = cmd_mc(&cfg).map_err(|e| e.to_string())?;
        let row = &out.report.rows[0];
        campaigns.violations += row.forced_exploration_violations;
        let bound = if delta == 0.1 {
            0.1
        } else {
            0.01 + 2.0 * (0.01f64 / 1000.0).sqrt()
        };
        ensure(row.error_rate <= bound && row.truncated == 0, || {
            format!(
                "delta {delta}: error {} (bound {bound}), truncated {}",
                row.error_rate, row.truncated
            )
        })?;
        summary.push(format!("delta={delta}: error {}", row.error_rate));
    }
    Ok(summary.join(", "))
}

fn sample_complexity_trend(campaigns: &mut Campaigns) -> Outcome {
    let cfg = experiment(
        [0.0, 0.0],
        PartitionSpec::half_space(vec![1.0, 1.0], 1.0),
        vec![1e-1, 1e-2, 1e-4],
        200,
        71,
    );
    let out = cmd_mc(&cfg).map_err(|e| e.to_string())?;
    let rows = &out.report.rows;
    campaigns.violations += rows
        .iter()
        .map(|r| r.forced_exploration_violations)
        .sum::<u64>();
    let se: Vec<f64> = rows
        .iter()
        .map(|r| r.std_t / (r.replications as f64).sqrt() / (1.0 / r.delta).ln())
        .collect();
    let ratios: Vec<f64> = rows.iter().map(|r| r.mean_t_over_log_inv_delta).collect();
    for i in 0..2 {
        let slack = (se[i] * se[i] + se[i + 1] * se[i + 1]).sqrt();
        ensure(ratios[i + 1] <= ratios[i] + slack, || {
            format!("ratio increased: {ratios:?} (se {se:?})")
        })?;
    }
    let t_star = rows[2].t_star.unwrap_or(f64::NAN);
    ensure(close(t_star, 8.0, 1e-8), || format!("t_star {t_star}"))?;
    ensure(
        ratios[2] <= 3.0 * t_star && ratios[2] >= t_star / 3.0,
        || format!("E[T]/log(1/delta) = {} at delta=1e-4 vs T* = 8", ratios[2]),
    )?;
    Ok(format!(
        "E[T]/log(1/delta) = {:.2}, {:.2}, {:.2} (T* = 8)",
        ratios[0], ratios[1], ratios[2]
    ))
}

fn tracking_invariants(campaigns: &mut Campaigns) -> Outcome {
    let cfg = experiment(
        [2.0, 0.0],
        PartitionSpec::threshold(1.0),
        vec![1e-4],
        500,
        81,
    );
    let out = cmd_mc(&cfg).map_err(|e| e.to_string())?;
    campaigns.violations += out.report.rows[0].forced_exploration_violations;
    let mut fractions: Vec<f64> = out
        .records
        .iter()
        .map(|r| r.result.counts[0] as f64 / r.result.stop_time as f64)
        .collect();
    fractions.sort_by(f64::total_cmp);
    let n = fractions.len();
    campaigns.median_fraction = 0.5 * (fractions[(n - 1) / 2] + fractions[n / 2]);
    ensure(campaigns.violations == 0, || {
        format!("{} forced-exploration violations", campaigns.violations)
    })?;
    ensure(campaigns.median_fraction >= 0.8, || {
        format!("median N1/T = {}", campaigns.median_fraction)
    })?;
    Ok(format!(
        "no violations across all campaigns, median N1/T = {:.3}",
        campaigns.median_fraction
    ))
}

fn kl_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for family in ["gaussian", "bernoulli", "poisson"] {
        kl_property_suite(family, 10_000, &mut rng)?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("3 x 10^4 cases, {elapsed:.1?}"))
}

fn risk_demo() -> Outcome {
    let start = Instant::now();
    let cfg = RiskDemoConfig {
        n_outer: 2000,
        horizon: 5,
        threshold: 2.0,
        inner_delta: 0.05,
        factor_model: FactorModel { volatility: 1.0 },
        payoff: PayoffMap::Identity,
        seed: 101,
        max_steps: 100_000,
        c_const: std::f64::consts::E,
        parallelism: 0,
    };
    let (report, _) = cmd_risk_demo(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let bound = cfg.inner_delta + 3.0 * report.binomial_se;
    ensure(report.abs_error <= bound, || {
        format!("|gamma_hat - gamma| = {} > {bound}", report.abs_error)
    })?;
    ensure(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "gamma_hat {} vs exact {} (bound {bound:.4}), {elapsed:.1?}",
        report.gamma_hat, report.gamma_exact
    ))
}

#[test]
fn acceptance() {
    let mut campaigns = Campaigns {
        violations: 0,
        median_fraction: f64::NAN,
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("threshold closed form", threshold_closed_form()),
        ("half-space KKT suite", halfspace_kkt_suite()),
        ("oracle equivalence", oracle_equivalence()),
        ("two-arm Gaussian three cases", two_arm_three_cases()),
        ("convex-set solver", convex_solver()),
        ("delta-PAC error rates", delta_pac(&mut campaigns)),
        (
            "sample-complexity trend",
            sample_complexity_trend(&mut campaigns),
        ),
        ("D-tracking invariants", tracking_invariants(&mut campaigns)),
        ("KL calculus properties", kl_properties()),
        ("risk demo", risk_demo()),
    ];
    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {:>2} [{name}]: PASS — {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} [{name}]: FAIL — {detail}", i + 1)
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
