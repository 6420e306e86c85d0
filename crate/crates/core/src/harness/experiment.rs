use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::partitions::Side;
use crate::solvers::{solve_lb, LowerBoundSolution, SolverSettings};
use crate::track_stop::{self, RunResult, StoppingConfig};

use super::{derive_seed, with_pool, ExperimentConfig, HarnessError, Provenance, Result};

/// Solves the lower-bound problem for the configured instance.
pub fn cmd_lb(cfg: &ExperimentConfig) -> Result<LowerBoundSolution> {
    cfg.validate()?;
    solve_lb(
        &cfg.arms,
        &cfg.true_means,
        &cfg.partition,
        &SolverSettings::default(),
    )
    .map_err(|source| HarnessError::Solver {
        context: format!(
            "lower bound for means {:?} under {:?}",
            cfg.true_means, cfg.partition
        ),
        source,
    })
}

/// Two-column `quantity,value` table of a lower-bound solution.
pub fn lb_table(sol: &LowerBoundSolution) -> String {
    let mut out = String::from("quantity,value\n");
    let _ = writeln!(out, "c_star,{}", sol.c_star);
    let _ = writeln!(out, "t_star,{}", sol.t_star);
    for (i, w) in sol.w_star.iter().enumerate() {
        let _ = writeln!(out, "w{},{w}", i + 1);
    }
    for (i, nu) in sol.nu_star.iter().enumerate() {
        let _ = writeln!(out, "nu{},{nu}", i + 1);
    }
    for (name, r) in &sol.kkt_residuals {
        let _ = writeln!(out, "residual_{name},{r}");
    }
    let _ = writeln!(out, "converged,{}", sol.converged);
    out
}

/// One Track-and-Stop run inside a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub delta: f64,
    pub replication: usize,
    pub seed: u64,
    pub result: RunResult,
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::A1 => "A1",
        Side::A2 => "A2",
        Side::Boundary => "boundary",
    }
}

impl RunRecord {
    fn csv_record(&self) -> Vec<String> {
        let r = &self.result;
        let mut row = vec![
            self.delta.to_string(),
            self.replication.to_string(),
            self.seed.to_string(),
            r.stop_time.to_string(),
            side_name(r.declared).to_string(),
            r.correct.to_string(),
            r.glr_at_stop.to_string(),
        ];
        row.extend(r.counts.iter().map(u64::to_string));
        row
    }
}

/// Renders run records as CSV with one `n{i}` count column per arm.
pub fn records_csv(arms: usize, records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "delta",
        "replication",
        "seed",
        "stop_time",
        "declared",
        "correct",
        "glr_at_stop",
    ]
    .map(String::from)
    .into();
    header.extend((1..=arms).map(|i| format!("n{i}")));
    w.write_record(&header)?;
    for r in records {
        w.write_record(r.csv_record())?;
    }
    finish_csv(w)
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn stopping(cfg: &ExperimentConfig, delta: f64) -> StoppingConfig {
    StoppingConfig {
        delta,
        c_const: cfg.c_const,
        max_steps: cfg.max_steps,
    }
}

fn one_run(cfg: &ExperimentConfig, delta: f64, replication: usize, seed: u64) -> Result<RunRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = track_stop::run(
        &cfg.arms,
        &cfg.true_means,
        &cfg.partition,
        &stopping(cfg, delta),
        &mut rng,
    )?;
    Ok(RunRecord {
        delta,
        replication,
        seed,
        result,
    })
}

/// A single run at `delta`, seeded directly with `seed`.
pub fn cmd_run(cfg: &ExperimentConfig, delta: f64, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(
            super::ConfigError::invalid("delta", format!("{delta} is outside (0, 1)")).into(),
        );
    }
    one_run(cfg, delta, 0, seed)
}

/// Aggregates for one confidence level. Truncated runs are excluded from the
/// error rate and stopping-time moments and counted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub delta: f64,
    pub replications: usize,
    pub truncated: usize,
    pub errors: usize,
    pub error_rate: f64,
    pub mean_t: f64,
    pub std_t: f64,
    pub mean_t_over_log_inv_delta: f64,
    /// Characteristic time of the true instance, when the solver supports it.
    pub t_star: Option<f64>,
    pub mean_weight_vector: Vec<f64>,
    pub forced_exploration_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<DeltaRow>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOutput {
    pub records: Vec<RunRecord>,
    pub report: ExperimentReport,
    pub csv: String,
}

fn aggregate(delta: f64, runs: &[RunRecord], t_star: Option<f64>, arms: usize) -> DeltaRow {
    let done: Vec<&RunResult> = runs
        .iter()
        .map(|r| &r.result)
        .filter(|r| !r.truncated)
        .collect();
    let n = done.len() as f64;
    let errors = done.iter().filter(|r| !r.correct).count();
    let mean_t = done.iter().map(|r| r.stop_time as f64).sum::<f64>() / n;
    let std_t = if done.len() > 1 {
        let ss: f64 = done
            .iter()
            .map(|r| (r.stop_time as f64 - mean_t).powi(2))
            .sum();
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut mean_weight_vector = vec![0.0; arms];
    for r in &done {
        for (m, &c) in mean_weight_vector.iter_mut().zip(&r.counts) {
            *m += c as f64 / r.stop_time as f64 / n;
        }
    }
    DeltaRow {
        delta,
        replications: runs.len(),
        truncated: runs.len() - done.len(),
        errors,
        error_rate: if done.is_empty() {
            0.0
        } else {
            errors as f64 / n
        },
        mean_t,
        std_t,
        mean_t_over_log_inv_delta: mean_t / (1.0 / delta).ln(),
        t_star,
        mean_weight_vector,
        forced_exploration_violations: runs
            .iter()
            .map(|r| r.result.forced_exploration_violations)
            .sum(),
    }
}

/// Runs `replications` independent runs for every δ. Results are identical
/// for any degree of parallelism.
pub fn cmd_mc(cfg: &ExperimentConfig) -> Result<McOutput> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.deltas.len())
        .flat_map(|d| (0..cfg.replications).map(move |r| (d, r)))
        .collect();
    let records = with_pool(cfg.parallelism, || {
        jobs.par_iter()
            .map(|&(d, r)| {
                let seed = derive_seed(cfg.seed, d as u64, r as u64);
                one_run(cfg, cfg.deltas[d], r, seed)
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let t_star = solve_lb(
        &cfg.arms,
        &cfg.true_means,
        &cfg.partition,
        &SolverSettings::default(),
    )
    .ok()
    .map(|s| s.t_star);
    let k = cfg.arms.len();
    let rows = records
        .chunks(cfg.replications)
        .zip(&cfg.deltas)
        .map(|(runs, &delta)| aggregate(delta, runs, t_star, k))
        .collect();

    // Parallelism is a scheduling choice and stays out of the config hash.
    let mut canonical = cfg.clone();
    canonical.parallelism = 0;
    let csv = records_csv(k, &records)?;
    Ok(McOutput {
        records,
        report: ExperimentReport {
            rows,
            provenance: Provenance::of(&canonical, cfg.seed)?,
        },
        csv,
    })
}
