//! Track-and-Stop: D-tracking sampling with a generalized likelihood ratio
//! stopping rule, declaring which side of the partition the means lie on.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partitions::{classify, PartitionError, PartitionSpec, Side};
use crate::solvers::{inner_inf, solve_lb, SolverError, SolverSettings};
use crate::spef::{ClampPolicy, SpefError, SpefModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackStopError {
    #[error("invalid stopping configuration: {0}")]
    InvalidConfig(String),
    #[error("true means lie on the partition boundary")]
    BoundaryTruth,
    #[error("{models} arm models but {means} means")]
    LengthMismatch { models: usize, means: usize },
    #[error(transparent)]
    Spef(#[from] SpefError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

pub type Result<T> = std::result::Result<T, TrackStopError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingConfig {
    pub delta: f64,
    /// Constant `c` in the threshold `ln(c t / delta)`. The default `e` is a
    /// heuristic; the realized error rate is what the experiments measure.
    pub c_const: f64,
    /// Safety cap on the number of samples.
    pub max_steps: u64,
}

impl StoppingConfig {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            c_const: std::f64::consts::E,
            max_steps: 1_000_000,
        }
    }

    pub fn validate(&self, arms: usize) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(TrackStopError::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.c_const > 0.0 && self.c_const.is_finite()) {
            return Err(TrackStopError::InvalidConfig(format!(
                "c_const must be positive, got {}",
                self.c_const
            )));
        }
        if self.max_steps < arms as u64 {
            return Err(TrackStopError::InvalidConfig(format!(
                "max_steps {} is below the number of arms {arms}",
                self.max_steps
            )));
        }
        Ok(())
    }
}

/// Sampling history of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub t: u64,
    pub counts: Vec<u64>,
    pub sums: Vec<f64>,
    /// Empirical means, clamped into the interior of each mean domain.
    pub emp_means: Vec<f64>,
    pub current_side: Side,
}

impl RunState {
    pub fn new(models: &[SpefModel]) -> Self {
        let k = models.len();
        Self {
            t: 0,
            counts: vec![0; k],
            sums: vec![0.0; k],
            emp_means: vec![0.0; k],
            current_side: Side::Boundary,
        }
    }

    /// Builds a state directly from counts and empirical means.
    pub fn from_counts(
        models: &[SpefModel],
        spec: &PartitionSpec,
        counts: Vec<u64>,
        means: &[f64],
    ) -> Result<Self> {
        let sums = counts
            .iter()
            .zip(means)
            .map(|(&n, &m)| n as f64 * m)
            .collect();
        let mut state = Self {
            t: counts.iter().sum(),
            counts,
            sums,
            emp_means: vec![0.0; models.len()],
            current_side: Side::Boundary,
        };
        state.refresh(models, spec)?;
        Ok(state)
    }

    pub fn observe(
        &mut self,
        models: &[SpefModel],
        spec: &PartitionSpec,
        arm: usize,
        x: f64,
    ) -> Result<()> {
        self.t += 1;
        self.counts[arm] += 1;
        self.sums[arm] += x;
        self.refresh(models, spec)
    }

    fn refresh(&mut self, models: &[SpefModel], spec: &PartitionSpec) -> Result<()> {
        let policy = ClampPolicy::default();
        for (i, m) in models.iter().enumerate() {
            if self.counts[i] > 0 {
                self.emp_means[i] =
                    m.clamp_to_interior(self.sums[i] / self.counts[i] as f64, policy);
            }
        }
        self.current_side = classify(spec, &self.emp_means)?;
        Ok(())
    }

    /// `min_i N_i(t) >= (sqrt(t) - K/2)^+ - 1`.
    pub fn forced_exploration_holds(&self) -> bool {
        let k = self.counts.len() as f64;
        let floor = ((self.t as f64).sqrt() - k / 2.0).max(0.0) - 1.0;
        self.counts.iter().all(|&n| n as f64 >= floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub stop_time: u64,
    pub declared: Side,
    pub correct: bool,
    pub glr_at_stop: f64,
    pub forced_exploration_violations: u64,
    /// The run hit `max_steps` before the stopping rule fired.
    pub truncated: bool,
    pub counts: Vec<u64>,
}

/// D-tracking: an under-sampled arm (`N_i < sqrt(t) - K/2`, lowest index)
/// if any, else the arm furthest behind its target proportion.
pub fn d_tracking_next(state: &RunState, w_hat: &[f64]) -> usize {
    let t = state.t as f64;
    let k = state.counts.len() as f64;
    if let Some(i) = state
        .counts
        .iter()
        .position(|&n| (n as f64) < t.sqrt() - k / 2.0)
    {
        return i;
    }
    let mut best = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for (i, (&w, &n)) in w_hat.iter().zip(&state.counts).enumerate() {
        let gap = w - n as f64 / t;
        if gap > best_gap {
            best = i;
            best_gap = gap;
        }
    }
    best
}

/// `inf_{nu in alternative} sum_i N_i K_i(mu_hat_i | nu_i)`; zero when the
/// empirical means sit on the boundary or the inner problem is unsupported.
pub fn glr_statistic(models: &[SpefModel], state: &RunState, spec: &PartitionSpec) -> f64 {
    if state.current_side == Side::Boundary {
        return 0.0;
    }
    let weights: Vec<f64> = state.counts.iter().map(|&n| n as f64).collect();
    inner_inf(models, &state.emp_means, &weights, spec)
        .map(|s| s.value)
        .unwrap_or(0.0)
}

/// `ln(c t / delta)`.
pub fn beta_threshold(t: u64, cfg: &StoppingConfig) -> f64 {
    (cfg.c_const * t as f64 / cfg.delta).ln()
}

fn least_sampled(state: &RunState) -> usize {
    let min = *state.counts.iter().min().expect("at least one arm");
    state
        .counts
        .iter()
        .position(|&n| n == min)
        .expect("minimum exists")
}

/// One run of Track-and-Stop on arms with the given true means.
pub fn run<R: Rng + ?Sized>(
    models: &[SpefModel],
    true_means: &[f64],
    spec: &PartitionSpec,
    cfg: &StoppingConfig,
    rng: &mut R,
) -> Result<RunResult> {
    if models.len() != true_means.len() {
        return Err(TrackStopError::LengthMismatch {
            models: models.len(),
            means: true_means.len(),
        });
    }
    let k = models.len();
    cfg.validate(k)?;
    for (m, &x) in models.iter().zip(true_means) {
        m.validate()?;
        m.check_mean(x)?;
    }
    spec.validate(k)?;
    let truth = classify(spec, true_means)?;
    if truth == Side::Boundary {
        return Err(TrackStopError::BoundaryTruth);
    }

    let settings = SolverSettings::default();
    let mut state = RunState::new(models);
    let mut violations = 0;
    let mut pull = |state: &mut RunState, arm: usize, rng: &mut R| -> Result<()> {
        let x = models[arm].sample(true_means[arm], rng)?;
        state.observe(models, spec, arm, x)?;
        if !state.forced_exploration_holds() {
            violations += 1;
        }
        Ok(())
    };
    for arm in 0..k {
        pull(&mut state, arm, rng)?;
    }

    let mut memo: Option<(Vec<f64>, Option<Vec<f64>>)> = None;
    loop {
        let z = glr_statistic(models, &state, spec);
        let stop = state.current_side != Side::Boundary && z >= beta_threshold(state.t, cfg);
        if stop || state.t >= cfg.max_steps {
            let declared = match state.current_side {
                Side::Boundary => Side::A1,
                side => side,
            };
            return Ok(RunResult {
                stop_time: state.t,
                declared,
                correct: declared == truth,
                glr_at_stop: z,
                forced_exploration_violations: violations,
                truncated: !stop,
                counts: state.counts.clone(),
            });
        }

        let w_hat = match &memo {
            Some((mu, w)) if *mu == state.emp_means => w.clone(),
            _ => {
                let w = match solve_lb(models, &state.emp_means, spec, &settings) {
                    Ok(sol) => Some(sol.w_star),
                    Err(SolverError::DegenerateInstance { .. }) => Some(vec![1.0 / k as f64; k]),
                    Err(_) => None,
                };
                memo = Some((state.emp_means.clone(), w.clone()));
                w
            }
        };
        let arm = match &w_hat {
            Some(w) => d_tracking_next(&state, w),
            None => least_sampled(&state),
        };
        pull(&mut state, arm, rng)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const G1: SpefModel = SpefModel::Gaussian { variance: 1.0 };

    fn state_with(counts: Vec<u64>) -> RunState {
        let spec = PartitionSpec::threshold(1.0);
        let means = vec![0.0; counts.len()];
        RunState::from_counts(&[G1; 2][..counts.len()], &spec, counts, &means).unwrap()
    }

    #[test]
    fn forced_exploration_first() {
        assert_eq!(d_tracking_next(&state_with(vec![5, 95]), &[0.0, 1.0]), 0);
    }

    #[test]
    fn tracking_ties_and_deficits() {
        assert_eq!(d_tracking_next(&state_with(vec![2, 2]), &[0.5, 0.5]), 0);
        assert_eq!(d_tracking_next(&state_with(vec![2, 2]), &[0.9, 0.1]), 0);
        assert_eq!(d_tracking_next(&state_with(vec![40, 60]), &[0.1, 0.9]), 1);
    }

    #[test]
    fn thresholds() {
        let cfg = |c: f64, delta: f64| StoppingConfig {
            delta,
            c_const: c,
            max_steps: 10,
        };
        assert!((beta_threshold(1, &cfg(1.0, 0.1)) - 10f64.ln()).abs() < 1e-12);
        assert_eq!(beta_threshold(1, &cfg(1.0, 1.0)), 0.0);
        assert!((beta_threshold(50, &cfg(2.0, 0.01)) - 9.210340371976184).abs() < 1e-12);
    }

    #[test]
    fn glr_examples() {
        let spec = PartitionSpec::half_space(vec![1.0, 1.0], 1.0);
        let s = RunState::from_counts(&[G1, G1], &spec, vec![100, 100], &[0.0, 0.0]).unwrap();
        assert!((glr_statistic(&[G1, G1], &s, &spec) - 25.0).abs() < 1e-9);

        let s = RunState::from_counts(&[G1, G1], &spec, vec![1, 1], &[0.5, 0.5]).unwrap();
        assert_eq!(s.current_side, Side::Boundary);
        assert_eq!(glr_statistic(&[G1, G1], &s, &spec), 0.0);

        let spec = PartitionSpec::threshold(1.0);
        let s = RunState::from_counts(&[G1], &spec, vec![8], &[2.0]).unwrap();
        assert!((glr_statistic(&[G1], &s, &spec) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn easy_single_arm_run() {
        let spec = PartitionSpec::threshold(0.0);
        let cfg = StoppingConfig::new(0.5);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = run(&[G1], &[5.0], &spec, &cfg, &mut rng).unwrap();
            assert!(r.correct && !r.truncated);
            assert!(r.stop_time <= 10, "stopped at {}", r.stop_time);
        }
    }

    #[test]
    fn truncation_is_reported() {
        let spec = PartitionSpec::threshold(0.0);
        let cfg = StoppingConfig {
            delta: 1e-6,
            c_const: 1.0,
            max_steps: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = run(&[G1, G1], &[0.01, -0.01], &spec, &cfg, &mut rng).unwrap();
        assert!(r.truncated);
        assert_eq!(r.stop_time, 3);
    }

    #[test]
    fn runs_are_reproducible() {
        let models = [SpefModel::Bernoulli, SpefModel::Bernoulli];
        let spec = PartitionSpec::half_space(vec![1.0, 1.0], 1.0);
        let cfg = StoppingConfig::new(0.05);
        let a = run(
            &models,
            &[0.3, 0.4],
            &spec,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let b = run(
            &models,
            &[0.3, 0.4],
            &spec,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.forced_exploration_violations, 0);
    }
}
