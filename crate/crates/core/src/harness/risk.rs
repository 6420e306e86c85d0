use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::partitions::{PartitionSpec, Side};
use crate::spef::SpefModel;
use crate::track_stop::{self, StoppingConfig};

use super::{derive_seed, with_pool, PayoffMap, Provenance, Result, RiskDemoConfig};

const FACTOR_STREAM: u64 = 0;
const INNER_STREAM: u64 = 1;

/// Outcome of the inner threshold-crossing run on one outer path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path: usize,
    /// `max_t Z_t`, known exactly in this model.
    pub max_mean: f64,
    pub exact: bool,
    /// The inner run declared that some `Z_t` exceeds the threshold.
    pub estimate: bool,
    pub stop_time: u64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopTimeSummary {
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub n_outer: usize,
    /// Fraction of paths whose inner run declared an exceedance.
    pub gamma_hat: f64,
    /// Fraction of paths that truly exceed the threshold.
    pub gamma_exact: f64,
    pub abs_error: f64,
    /// `sqrt(gamma_exact (1 - gamma_exact) / n_outer)`.
    pub binomial_se: f64,
    pub inner_delta: f64,
    pub misclassified_paths: usize,
    pub truncated_paths: usize,
    pub stop_time: StopTimeSummary,
    pub provenance: Provenance,
}

fn payoff(map: PayoffMap, path: &[f64]) -> Vec<f64> {
    match map {
        PayoffMap::Identity => path.to_vec(),
    }
}

fn simulate_path(cfg: &RiskDemoConfig, j: usize) -> Result<PathRecord> {
    let mut factor_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, FACTOR_STREAM, j as u64));
    let mut x = 0.0;
    let factor: Vec<f64> = (0..cfg.horizon)
        .map(|_| {
            let step: f64 = StandardNormal.sample(&mut factor_rng);
            x += cfg.factor_model.volatility * step;
            x
        })
        .collect();
    let means = payoff(cfg.payoff, &factor);
    let max_mean = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let arms = vec![SpefModel::Gaussian { variance: 1.0 }; cfg.horizon];
    let stopping = StoppingConfig {
        delta: cfg.inner_delta,
        c_const: cfg.c_const,
        max_steps: cfg.max_steps,
    };
    let mut inner_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INNER_STREAM, j as u64));
    let run = track_stop::run(
        &arms,
        &means,
        &PartitionSpec::threshold(cfg.threshold),
        &stopping,
        &mut inner_rng,
    )?;
    Ok(PathRecord {
        path: j,
        max_mean,
        exact: max_mean >= cfg.threshold,
        estimate: run.declared == Side::A1,
        stop_time: run.stop_time,
        truncated: run.truncated,
    })
}

fn quantile(sorted: &[u64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let frac = pos - lo as f64;
    sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
}

/// Nested-simulation estimate of `P(max_t Z_t >= u)`: each outer factor path
/// gets one Track-and-Stop threshold-crossing run on its `K` dates.
/// Renders per-path records as CSV.
pub fn paths_csv(paths: &[PathRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in paths {
        w.serialize(p)?;
    }
    super::experiment::finish_csv(w)
}

pub fn cmd_risk_demo(cfg: &RiskDemoConfig) -> Result<(RiskReport, Vec<PathRecord>)> {
    cfg.validate()?;
    let paths = with_pool(cfg.parallelism, || {
        (0..cfg.n_outer)
            .into_par_iter()
            .map(|j| simulate_path(cfg, j))
            .collect::<Result<Vec<_>>>()
    })??;

    let n = cfg.n_outer as f64;
    let gamma_hat = paths.iter().filter(|p| p.estimate).count() as f64 / n;
    let gamma_exact = paths.iter().filter(|p| p.exact).count() as f64 / n;
    let mut times: Vec<u64> = paths.iter().map(|p| p.stop_time).collect();
    times.sort_unstable();
    let mut canonical = cfg.clone();
    canonical.parallelism = 0;
    let report = RiskReport {
        n_outer: cfg.n_outer,
        gamma_hat,
        gamma_exact,
        abs_error: (gamma_hat - gamma_exact).abs(),
        binomial_se: (gamma_exact * (1.0 - gamma_exact) / n).sqrt(),
        inner_delta: cfg.inner_delta,
        misclassified_paths: paths.iter().filter(|p| p.estimate != p.exact).count(),
        truncated_paths: paths.iter().filter(|p| p.truncated).count(),
        stop_time: StopTimeSummary {
            mean: times.iter().sum::<u64>() as f64 / n,
            median: quantile(&times, 0.5),
            p90: quantile(&times, 0.9),
            max: *times.last().expect("n_outer >= 1"),
        },
        provenance: Provenance::of(&canonical, cfg.seed)?,
    };
    Ok((report, paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::FactorModel;

    fn cfg(volatility: f64, threshold: f64) -> RiskDemoConfig {
        RiskDemoConfig {
            n_outer: 20,
            horizon: 3,
            threshold,
            inner_delta: 0.05,
            factor_model: FactorModel { volatility },
            payoff: PayoffMap::Identity,
            seed: 5,
            max_steps: 100_000,
            c_const: std::f64::consts::E,
            parallelism: 2,
        }
    }

    #[test]
    fn flat_paths() {
        let (r, _) = cmd_risk_demo(&cfg(0.0, -1.0)).unwrap();
        assert_eq!(r.gamma_hat, 1.0);
        assert_eq!(r.gamma_exact, 1.0);
        let (r, paths) = cmd_risk_demo(&cfg(0.0, 1.0)).unwrap();
        assert_eq!(r.gamma_hat, 0.0);
        assert!(paths.iter().all(|p| !p.estimate && !p.truncated));
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[1, 2, 3, 4], 0.5), 2.5);
        assert_eq!(quantile(&[7], 0.9), 7.0);
    }
}
