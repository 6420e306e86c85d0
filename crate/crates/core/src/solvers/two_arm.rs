use serde::{Deserialize, Serialize};

use crate::partitions::HalfSpace;

use super::{LowerBoundSolution, Result, SolverError};

/// Which constraints bind at the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoArmCase {
    /// Only the first constraint binds; the problem is its half-space problem.
    FirstOnly,
    /// Only the second constraint binds.
    SecondOnly,
    /// The characteristic ellipse is tangent to both lines.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoArmSolution {
    pub solution: LowerBoundSolution,
    pub case: TwoArmCase,
    /// `b2/b1` sits exactly on a case boundary; resolved as [`TwoArmCase::Both`].
    pub on_case_boundary: bool,
}

/// Closed form for two Gaussian arms with common variance and a union of two
/// half-spaces `{<a_j, nu> >= b_j}`.
///
/// In the frame `x = (nu - mu) / sqrt(2 variance)` every arm costs
/// `K_i = x_i^2` and the constraints become `<a_j, x> >= beta_j` with
/// `beta_j = (b_j - <a_j, mu>) / sqrt(2 variance)`. Against a single line the
/// optimal weights are `|a_{j,i}| / sum_i |a_{j,i}|`; if that allocation
/// still makes constraint `j` the cheaper one it is optimal. Otherwise the
/// weights make the ellipse `w1 x1^2 + w2 x2^2 = C` tangent to both lines.
pub fn solve_two_arm_gaussian(
    mu: [f64; 2],
    first: &HalfSpace,
    second: &HalfSpace,
    variance: f64,
) -> Result<TwoArmSolution> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(SolverError::InvalidInput(format!(
            "variance {variance} must be positive"
        )));
    }
    let rows = [first, second];
    for c in rows {
        if c.a.len() != 2 || c.a.iter().any(|&x| x == 0.0 || !x.is_finite()) {
            return Err(SolverError::InvalidInput(
                "two-arm constraints need two non-zero coefficients".into(),
            ));
        }
    }
    let (a1, a2) = (&first.a, &second.a);
    let det = (a1[1] * a2[0]).powi(2) - (a1[0] * a2[1]).powi(2);
    if a1[0] * a2[1] == a1[1] * a2[0] {
        return Err(SolverError::InvalidInput(
            "constraint normals are parallel".into(),
        ));
    }
    let scale = (2.0 * variance).sqrt();
    let mut beta = [0.0; 2];
    for (j, c) in rows.iter().enumerate() {
        beta[j] = (c.b - c.dot(&mu)) / scale;
        if beta[j] <= 0.0 {
            return Err(SolverError::MeanInsideConstraint { index: j });
        }
    }

    let s1 = a1[0].abs() + a1[1].abs();
    let s2 = a2[0].abs() + a2[1].abs();
    let ratio = (beta[1] / beta[0]).powi(2);
    let case1 = (a2[0].powi(2) / a1[0].abs() + a2[1].powi(2) / a1[1].abs()) / s1;
    let case2 = s2 / (a1[0].powi(2) / a2[0].abs() + a1[1].powi(2) / a2[1].abs());
    let on_case_boundary = ratio == case1 || ratio == case2;

    let to_nu = |x: [f64; 2]| vec![mu[0] + scale * x[0], mu[1] + scale * x[1]];
    let ellipse = |w: &[f64], x: [f64; 2]| w[0] * x[0] * x[0] + w[1] * x[1] * x[1];

    let single = |j: usize| -> (Vec<f64>, [f64; 2], f64) {
        let (a, s) = if j == 0 { (a1, s1) } else { (a2, s2) };
        let t = beta[j] / s;
        let w = vec![a[0].abs() / s, a[1].abs() / s];
        (w, [a[0].signum() * t, a[1].signum() * t], t * t)
    };

    let (case, w, points, c) = if ratio > case1 {
        let (w, x, c) = single(0);
        (TwoArmCase::FirstOnly, w, vec![x], c)
    } else if ratio < case2 {
        let (w, x, c) = single(1);
        (TwoArmCase::SecondOnly, w, vec![x], c)
    } else {
        let w1_c = det / ((beta[1] * a1[1]).powi(2) - (beta[0] * a2[1]).powi(2));
        let w2_c = det / ((beta[0] * a2[0]).powi(2) - (beta[1] * a1[0]).powi(2));
        let c = 1.0 / (w1_c + w2_c);
        let w = vec![w1_c * c, w2_c * c];
        let points = rows
            .iter()
            .zip(beta)
            .map(|(r, bj)| [c * r.a[0] / (w[0] * bj), c * r.a[1] / (w[1] * bj)])
            .collect();
        (TwoArmCase::Both, w, points, c)
    };

    let line = points
        .iter()
        .zip(rows.iter().zip(beta))
        .map(|(x, (r, bj))| (r.a[0] * x[0] + r.a[1] * x[1] - bj).abs())
        .fold(0.0, f64::max);
    let ell = points
        .iter()
        .map(|&x| (ellipse(&w, x) - c).abs())
        .fold(0.0, f64::max);
    let nus: Vec<Vec<f64>> = points.iter().map(|&x| to_nu(x)).collect();
    let mut sol = LowerBoundSolution::new(w, nus[0].clone(), c)
        .residual("tangency_line", line)
        .residual("tangency_ellipse", ell);
    sol.active_set = vec![0, 1];
    sol.active_constraints = match case {
        TwoArmCase::FirstOnly => vec![0],
        TwoArmCase::SecondOnly => vec![1],
        TwoArmCase::Both => vec![0, 1],
    };
    sol.alternatives = nus;
    Ok(TwoArmSolution {
        solution: sol,
        case,
        on_case_boundary,
    })
}
