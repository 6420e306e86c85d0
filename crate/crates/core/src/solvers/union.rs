use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::partitions::{HalfSpace, PartitionSpec, Side};
use crate::spef::SpefModel;

use super::halfspace;
use super::{
    check_instance, kl_vector, side_of, solve_halfspace, weighted_kl, InnerSolution,
    LowerBoundSolution, OuterMethod, Result, SolverError, SolverSettings, StepSchedule,
};

/// Per-constraint inner values and minimizers at one weight vector.
struct Evaluation {
    g: f64,
    values: Vec<f64>,
    minimizers: Vec<Option<Vec<f64>>>,
}

impl Evaluation {
    fn active(&self, rel_tol: f64) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&j| self.values[j] <= self.g + rel_tol * self.g.abs())
            .collect()
    }
}

fn evaluate(
    models: &[SpefModel],
    mu: &[f64],
    w: &[f64],
    constraints: &[HalfSpace],
) -> Result<Evaluation> {
    let mut values = Vec::with_capacity(constraints.len());
    let mut minimizers = Vec::with_capacity(constraints.len());
    for c in constraints {
        match halfspace::inner(models, mu, w, &c.a, c.b) {
            Ok(s) => {
                values.push(s.value);
                minimizers.push(s.minimizer);
            }
            // A constraint unreachable inside the domain never binds.
            Err(SolverError::InfeasibleAlternative) => {
                values.push(f64::INFINITY);
                minimizers.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let g = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if g.is_infinite() {
        return Err(SolverError::InfeasibleAlternative);
    }
    Ok(Evaluation {
        g,
        values,
        minimizers,
    })
}

/// `min_j inf_{nu in B_j} sum_i w_i K_i(mu_i | nu_i)` with the per-constraint values.
pub(crate) fn inner_union(
    models: &[SpefModel],
    mu: &[f64],
    w: &[f64],
    constraints: &[HalfSpace],
) -> Result<(InnerSolution, Vec<f64>)> {
    let ev = evaluate(models, mu, w, constraints)?;
    let j = ev.active(0.0)[0];
    Ok((
        InnerSolution {
            value: ev.g,
            minimizer: ev.minimizers[j].clone(),
        },
        ev.values,
    ))
}

fn floored(w: &[f64], floor: f64) -> Vec<f64> {
    let v: Vec<f64> = w.iter().map(|x| x.max(floor)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k as f64 + 1.0);
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Relative accuracy the LP can certify; gaps below it are noise.
const LP_PRECISION: f64 = 1e-9;

/// `max z` subject to `z <= <d, w>` for every cut and `w` in the simplex.
/// Cuts are expected to be normalized to unit size.
fn cutting_plane_lp(cuts: &[Vec<f64>], k: usize) -> Result<(f64, Vec<f64>)> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let z = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let w: Vec<_> = (0..k).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let ones: Vec<_> = w.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(ones.as_slice(), ComparisonOp::Eq, 1.0);
    for d in cuts {
        // Row scaling keeps coefficients near unit size.
        let s = d.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut row = vec![(z, 1.0 / s)];
        row.extend(w.iter().zip(d).map(|(&v, &di)| (v, -di / s)));
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, 0.0);
    }
    let sol =
        lp.solve()
            .ok()
            .and_then(|o| o.into_solution().ok())
            .ok_or(SolverError::NoConvergence {
                what: "cutting-plane LP",
            })?;
    let wv: Vec<f64> = w.iter().map(|&v| sol.var_value(v).max(0.0)).collect();
    let s: f64 = wv.iter().sum();
    Ok((sol.var_value(z), wv.into_iter().map(|x| x / s).collect()))
}

/// Instance restricted to the support of `a`.
fn restrict(
    models: &[SpefModel],
    mu: &[f64],
    a: &[f64],
) -> (Vec<usize>, Vec<SpefModel>, Vec<f64>, Vec<f64>) {
    let idx: Vec<usize> = (0..a.len()).filter(|&i| a[i] != 0.0).collect();
    (
        idx.clone(),
        idx.iter().map(|&i| models[i]).collect(),
        idx.iter().map(|&i| mu[i]).collect(),
        idx.iter().map(|&i| a[i]).collect(),
    )
}

/// Single-half-space optimum for constraint `c`, embedded in the full instance.
fn face_solution(
    models: &[SpefModel],
    mu: &[f64],
    c: &HalfSpace,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let (idx, m, x, a) = restrict(models, mu, &c.a);
    let sol = solve_halfspace(&m, &x, &a, c.b)?;
    let mut w = vec![0.0; mu.len()];
    let mut nu = mu.to_vec();
    for (p, &i) in idx.iter().enumerate() {
        w[i] = sol.w_star[p];
        nu[i] = sol.nu_star[p];
    }
    Ok((w, nu, sol.c_star))
}

/// Solves the lower-bound problem for `A2 = U_j {<a_j, nu> >= b_j}` with
/// `mu` in the polytope `A1`.
///
/// `g(w) = min_j g_j(w)` is concave, and by homogeneity of each `g_j` in `w`
/// the vector `d_j = (K_i(mu_i | nu_i^j(w)))_i` of costs at the minimizer
/// over `B_j` satisfies `g_j(w) = <d_j, w>` and `g_j(w') <= <d_j, w'>`.
///
/// Two stages:
/// 1. If the best single-constraint allocation keeps its own constraint the
///    binding one, it is optimal: `g <= g_j <= C_j` everywhere.
/// 2. Otherwise the outer maximization runs by cutting planes (or projected
///    supergradient ascent, per `settings.outer_method`) until the gap
///    between the model upper bound and the best evaluated `g` closes.
pub fn solve_union_halfspaces(
    models: &[SpefModel],
    mu: &[f64],
    constraints: &[HalfSpace],
    settings: &SolverSettings,
) -> Result<LowerBoundSolution> {
    check_instance(models, mu)?;
    let spec = PartitionSpec::UnionHalfSpaces {
        constraints: constraints.to_vec(),
    };
    if side_of(&spec, mu)? != Side::A1 {
        let index = constraints
            .iter()
            .position(|c| c.dot(mu) >= c.b)
            .expect("some constraint contains mu");
        return Err(SolverError::MeanInsideConstraint { index });
    }
    let k = mu.len();

    let mut faces = Vec::new();
    for c in constraints {
        match face_solution(models, mu, c) {
            Ok(f) => faces.push(Some(f)),
            Err(SolverError::InfeasibleAlternative) => faces.push(None),
            Err(e) => return Err(e),
        }
    }
    let c_min = faces
        .iter()
        .flatten()
        .map(|f| f.2)
        .fold(f64::INFINITY, f64::min);
    if c_min.is_infinite() {
        return Err(SolverError::InfeasibleAlternative);
    }
    for (w, _, c_j) in faces.iter().flatten() {
        if *c_j > c_min * (1.0 + 1e-12) {
            continue;
        }
        let ev = evaluate(models, mu, w, constraints)?;
        if ev.g >= c_j * (1.0 - 1e-12) {
            return Ok(finish(models, mu, w.clone(), ev, 0.0, 0, true, settings));
        }
    }

    let mut w = vec![1.0 / k as f64; k];
    let mut best: Option<(Vec<f64>, Evaluation)> = None;
    let mut cuts: Vec<Vec<f64>> = Vec::new();
    let mut upper = c_min;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = false;

    for it in 1..=settings.max_outer_iters {
        iterations = it;
        let wq = floored(&w, settings.simplex_floor);
        let ev = evaluate(models, mu, &wq, constraints)?;
        let active = ev.active(settings.active_set_tol);

        let mut grads = Vec::new();
        for (j, nu) in ev.minimizers.iter().enumerate() {
            if let Some(nu) = nu {
                let d = kl_vector(models, mu, nu);
                if active.contains(&j) {
                    grads.push(d.clone());
                }
                // Scaled by the smallest face value, an upper bound on g.
                cuts.push(d.iter().map(|x| x / c_min).collect());
            }
        }
        if best.as_ref().is_none_or(|(_, b)| ev.g > b.g) {
            best = Some((wq.clone(), ev));
        }
        let best_g = best.as_ref().map(|(_, b)| b.g).unwrap_or(0.0);

        match settings.outer_method {
            OuterMethod::CuttingPlane => {
                let (ub, next) = cutting_plane_lp(&cuts, k)?;
                upper = upper.min(ub * c_min);
                // A repeated query point adds no information: the remaining
                // gap is below what the inner evaluations can resolve.
                stalled = next.iter().zip(&w).all(|(a, b)| (a - b).abs() <= 1e-13);
                w = next;
            }
            OuterMethod::Supergradient(schedule) => {
                let step = match schedule {
                    StepSchedule::Diminishing { scale } => scale / (it as f64).sqrt(),
                    StepSchedule::Fixed { step } => step,
                };
                let mut avg = vec![0.0; k];
                for d in &grads {
                    for i in 0..k {
                        avg[i] += d[i] / grads.len() as f64;
                    }
                }
                // Any supergradient d bounds g(w') <= <d, w'>, hence by max_i d_i.
                upper = upper.min(avg.iter().cloned().fold(0.0, f64::max));
                let norm = avg
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                let stepped: Vec<f64> = wq
                    .iter()
                    .zip(&avg)
                    .map(|(x, d)| x + step * d / norm)
                    .collect();
                w = project_simplex(&stepped);
            }
        }
        gap = (upper - best_g).max(0.0);
        if gap <= settings.tol_kkt * best_g + LP_PRECISION * c_min {
            converged = true;
            break;
        }
        if stalled {
            break;
        }
    }

    let (w, ev) = best.expect("at least one iteration");
    Ok(finish(
        models, mu, w, ev, gap, iterations, converged, settings,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    models: &[SpefModel],
    mu: &[f64],
    w: Vec<f64>,
    ev: Evaluation,
    gap: f64,
    iterations: usize,
    converged: bool,
    settings: &SolverSettings,
) -> LowerBoundSolution {
    let active = ev.active(settings.active_set_tol);
    let alternatives: Vec<Vec<f64>> = active
        .iter()
        .filter_map(|&j| ev.minimizers[j].clone())
        .collect();
    let nu = alternatives[0].clone();
    let c_star = weighted_kl(models, mu, &w, &nu);
    let spread = active
        .iter()
        .map(|&j| ev.values[j] - ev.g)
        .fold(0.0, f64::max);
    let mut sol = LowerBoundSolution::new(w.clone(), nu, c_star)
        .residual("duality_gap", gap)
        .residual("active_spread", spread);
    sol.alternatives = alternatives;
    sol.active_set = (0..w.len())
        .filter(|&i| w[i] > 10.0 * settings.simplex_floor)
        .collect();
    sol.active_constraints = active;
    sol.iterations = iterations;
    sol.converged = converged;
    sol
}

/// The lower-bound problem for a union of half-spaces when `mu` is inside
/// the union, so the alternative is the closed polytope `A1`.
///
/// The polytope lies inside every face's half-space, so its value is at
/// least the largest single-face value; when that face's min-max point is
/// in the polytope the two coincide. A min-max point on two faces (a
/// corner) has no unique supporting hyperplane and is reported as such.
pub(crate) fn solve_polytope_alternative(
    models: &[SpefModel],
    mu: &[f64],
    constraints: &[HalfSpace],
) -> Result<LowerBoundSolution> {
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    for c in constraints.iter().filter(|c| c.dot(mu) > c.b) {
        let face = face_solution(models, mu, c)?;
        if best.as_ref().is_none_or(|b| face.2 > b.2) {
            best = Some(face);
        }
    }
    let (w, nu, c_star) = best.ok_or(SolverError::BoundaryMean)?;
    let scale = |c: &HalfSpace| {
        c.b.abs()
            .max(c.a.iter().map(|x| x.abs()).fold(1.0, f64::max))
    };
    let slacks: Vec<f64> = constraints
        .iter()
        .map(|c| (c.b - c.dot(&nu)) / scale(c))
        .collect();
    if slacks.iter().any(|&s| s < -1e-9) {
        return Err(SolverError::UnsupportedCase(
            "min-max point over the polytope lies on several faces".into(),
        ));
    }
    let tight = slacks.iter().filter(|&&s| s.abs() <= 1e-9).count();
    if tight > 1 {
        return Err(SolverError::NonUniqueHyperplane {
            nu_star: nu,
            c_star,
        });
    }
    Ok(LowerBoundSolution::new(w, nu, c_star))
}
