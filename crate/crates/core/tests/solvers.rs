mod common;

use approx::assert_abs_diff_eq;
use common::*;
use partid::oracle::{brute_force_lb, GridSpec};
use partid::partitions::{ConvexSublevel, HalfSpace, PartitionSpec};
use partid::solvers::{
    inner_inf, solve_halfspace, solve_lb, solve_two_arm_gaussian, solve_union_halfspaces,
    SolverSettings, TwoArmCase,
};
use partid::spef::SpefModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn g(models: &[SpefModel], mu: &[f64], w: &[f64], spec: &PartitionSpec) -> f64 {
    inner_inf(models, mu, w, spec).unwrap().value
}

#[test]
fn halfspace_kkt_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for n in 0..100 {
        let k = 2 + n % 3;
        let (inst, sol) = random_halfspace(&mut rng, k);
        let v = halfspace_kkt_violation(&inst, &sol);
        assert!(v <= 1e-8, "instance {n}: KKT violation {v}");
        for (name, r) in &sol.kkt_residuals {
            assert!(*r <= 1e-8, "instance {n}: residual {name} = {r}");
        }
    }
}

#[test]
fn optimal_weights_are_a_saddle_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (inst, sol) = random_halfspace(&mut rng, 3);
        let spec = PartitionSpec::half_space(inst.a.clone(), inst.b);
        let at_opt = g(&inst.models, &inst.mu, &sol.w_star, &spec);
        assert_abs_diff_eq!(at_opt, sol.c_star, epsilon = 1e-8 * sol.c_star.max(1.0));
        for _ in 0..20 {
            let w = random_simplex(&mut rng, 3);
            assert!(g(&inst.models, &inst.mu, &w, &spec) <= sol.c_star + 1e-10);
        }
    }
}

#[test]
fn inner_value_is_concave_and_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let specs = [
        PartitionSpec::threshold(0.5),
        PartitionSpec::half_space(vec![1.0, -2.0, 1.0], 2.5),
        PartitionSpec::convex(ConvexSublevel::ball(vec![3.0, 3.0, 3.0], 1.5).unwrap()),
        PartitionSpec::union(vec![
            HalfSpace::new(vec![-1.0, 1.0, 0.0], 0.0),
            HalfSpace::new(vec![-1.0, 0.0, 1.0], 0.0),
        ]),
    ];
    let models = [
        G1,
        SpefModel::Poisson,
        SpefModel::Gaussian { variance: 2.0 },
    ];
    let mu = [1.0, 0.4, -0.5];
    for spec in &specs {
        for _ in 0..30 {
            let w1 = random_simplex(&mut rng, 3);
            let w2 = random_simplex(&mut rng, 3);
            let mid: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 0.5 * (a + b)).collect();
            let (g1, g2, gm) = (
                g(&models, &mu, &w1, spec),
                g(&models, &mu, &w2, spec),
                g(&models, &mu, &mid, spec),
            );
            assert!(gm >= 0.5 * (g1 + g2) - 1e-8, "{}: concavity", spec.kind());
            let alpha = rng.gen_range(0.1..10.0);
            let scaled: Vec<f64> = w1.iter().map(|x| alpha * x).collect();
            let gs = g(&models, &mu, &scaled, spec);
            assert!(
                (gs - alpha * g1).abs() <= 1e-8 * gs.max(1.0),
                "{}: scaling",
                spec.kind()
            );
        }
    }
}

#[test]
fn union_solver_matches_two_arm_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 100 {
        let (mu, h1, h2, var) = random_double_tangency(&mut rng);
        let closed = solve_two_arm_gaussian(mu, &h1, &h2, var).unwrap();
        if closed.case != TwoArmCase::Both {
            continue;
        }
        let models = [SpefModel::Gaussian { variance: var }; 2];
        let it = solve_union_halfspaces(
            &models,
            &mu,
            &[h1.clone(), h2.clone()],
            &SolverSettings::default(),
        )
        .unwrap();
        let c = closed.solution.c_star;
        assert!(
            (it.c_star - c).abs() <= 1e-6 * c.max(1.0),
            "C {} vs {c}",
            it.c_star
        );
        assert!((it.w_star[0] - closed.solution.w_star[0]).abs() <= 1e-6);
        checked += 1;
    }
}

#[test]
fn single_line_cases_reduce_to_half_spaces() {
    let g2 = SpefModel::Gaussian { variance: 0.5 };
    let h1 = HalfSpace::new(vec![1.0, 1.0], 1.0);
    let far = HalfSpace::new(vec![1.0, 2.0], 10.0);
    let first = solve_two_arm_gaussian([0.0, 0.0], &h1, &far, 0.5).unwrap();
    assert_eq!(first.case, TwoArmCase::FirstOnly);
    let hs = solve_halfspace(&[g2, g2], &[0.0, 0.0], &h1.a, h1.b).unwrap();
    assert_abs_diff_eq!(first.solution.c_star, hs.c_star, epsilon = 1e-10);
    assert_abs_diff_eq!(
        first.solution.c_star,
        gaussian_halfspace_c(&[0.0, 0.0], &h1.a, h1.b, 0.5),
        epsilon = 1e-10
    );

    let second = solve_two_arm_gaussian([0.0, 0.0], &far, &h1, 0.5).unwrap();
    assert_eq!(second.case, TwoArmCase::SecondOnly);
    assert_abs_diff_eq!(second.solution.c_star, hs.c_star, epsilon = 1e-10);
}

#[test]
fn best_arm_instance_matches_brute_force() {
    // Alternative: some other arm at least as good as the first.
    let spec = PartitionSpec::union(vec![
        HalfSpace::new(vec![-1.0, 1.0, 0.0], 0.0),
        HalfSpace::new(vec![-1.0, 0.0, 1.0], 0.0),
    ]);
    let models = [G1; 3];
    let mu = [1.0, 0.5, 0.0];
    let sol = solve_lb(&models, &mu, &spec, &SolverSettings::default()).unwrap();
    let est = brute_force_lb(&models, &mu, &spec, GridSpec::default()).unwrap();
    assert!(
        (sol.c_star - est.c_star).abs() <= 2e-3,
        "{} vs {}",
        sol.c_star,
        est.c_star
    );
    // Every active alternative is equally cheap.
    assert!(sol.alternatives.len() >= 2);
}

fn random_spec<R: Rng>(kind: usize, mu: &[f64], rng: &mut R) -> PartitionSpec {
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
            let h = |rng: &mut R, a: Vec<f64>| {
                let b = a[0] * mu[0] + a[1] * mu[1] + rng.gen_range(0.2..0.8);
                HalfSpace::new(a, b)
            };
            let a1 = vec![rng.gen_range(1.0..2.0), rng.gen_range(0.2..1.0)];
            let a2 = vec![rng.gen_range(0.2..1.0), rng.gen_range(1.0..2.0)];
            PartitionSpec::union(vec![h(rng, a1), h(rng, a2)])
        }
    }
}

#[test]
fn two_arm_instances_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for kind in 0..4 {
        let mut checked = 0;
        while checked < 20 {
            let models = [G1, SpefModel::Gaussian { variance: 0.5 }];
            let mu = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let spec = random_spec(kind, &mu, &mut rng);
            let Ok(sol) = solve_lb(&models, &mu, &spec, &SolverSettings::default()) else {
                continue;
            };
            let est = brute_force_lb(&models, &mu, &spec, GridSpec::default()).unwrap();
            assert!(
                (sol.c_star - est.c_star).abs() <= 2e-3,
                "{}: {} vs {} for mu {mu:?}",
                spec.kind(),
                sol.c_star,
                est.c_star
            );
            checked += 1;
        }
    }
}

#[test]
fn mixed_family_instances_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let models = [random_model(&mut rng), random_model(&mut rng)];
        let mu = [
            random_mean(models[0], &mut rng),
            random_mean(models[1], &mut rng),
        ];
        let spec = random_spec(1, &mu, &mut rng);
        let Ok(sol) = solve_lb(&models, &mu, &spec, &SolverSettings::default()) else {
            continue;
        };
        let est = brute_force_lb(&models, &mu, &spec, GridSpec::default()).unwrap();
        assert!((sol.c_star - est.c_star).abs() <= 2e-3 * sol.c_star.max(1.0));
    }
}
