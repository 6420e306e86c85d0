use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use partid::harness::{
    self, lb_table, parse_config, paths_csv, records_csv, seed_override, Config, ConfigError,
    ExperimentConfig, ExperimentReport, HarnessError, RiskDemoConfig, RiskReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "partid",
    version,
    about = "Partition identification in multi-armed bandits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for result files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format of what is printed to stdout.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads (0 = all cores); overrides the config.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the lower-bound problem for the configured instance.
    Lb { config: PathBuf },
    /// Run Track-and-Stop once.
    Run {
        config: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo campaign over every configured delta.
    Mc { config: PathBuf },
    /// Nested-simulation tail-probability estimate.
    RiskDemo { config: PathBuf },
}

fn load(path: &Path) -> Result<Config, HarnessError> {
    let mut cfg = parse_config(path)?;
    if let Some(seed) = seed_override()? {
        *cfg.seed_mut() = seed;
    }
    Ok(cfg)
}

fn experiment(path: &Path, parallelism: Option<usize>) -> Result<ExperimentConfig, HarnessError> {
    match load(path)? {
        Config::Experiment(mut c) => {
            if let Some(p) = parallelism {
                c.parallelism = p;
            }
            Ok(c)
        }
        Config::RiskDemo(_) => Err(ConfigError::invalid(
            "n_outer",
            "this is a risk-demo config; use `partid risk-demo`",
        )
        .into()),
    }
}

fn risk(path: &Path, parallelism: Option<usize>) -> Result<RiskDemoConfig, HarnessError> {
    match load(path)? {
        Config::RiskDemo(mut c) => {
            if let Some(p) = parallelism {
                c.parallelism = p;
            }
            Ok(c)
        }
        Config::Experiment(_) => {
            Err(ConfigError::invalid("n_outer", "missing; not a risk-demo config").into())
        }
    }
}

fn write_out(dir: &Option<PathBuf>, files: &[(&str, &str)]) -> Result<(), HarnessError> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        for (name, body) in files {
            fs::write(dir.join(name), body)?;
        }
    }
    Ok(())
}

fn summary_table(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "delta,replications,truncated,error_rate,mean_t,std_t,mean_t_over_log_inv_delta,t_star,mean_weight_vector\n",
    );
    for r in &report.rows {
        let weights: Vec<String> = r
            .mean_weight_vector
            .iter()
            .map(|w| format!("{w:.4}"))
            .collect();
        let t_star = r.t_star.map_or_else(String::new, |t| t.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.delta,
            r.replications,
            r.truncated,
            r.error_rate,
            r.mean_t,
            r.std_t,
            r.mean_t_over_log_inv_delta,
            t_star,
            weights.join(";")
        );
    }
    out
}

fn risk_table(r: &RiskReport) -> String {
    format!(
        "quantity,value\nn_outer,{}\ngamma_hat,{}\ngamma_exact,{}\nabs_error,{}\nbinomial_se,{}\n\
         misclassified_paths,{}\ntruncated_paths,{}\nstop_time_mean,{}\nstop_time_median,{}\n\
         stop_time_p90,{}\nstop_time_max,{}\n",
        r.n_outer,
        r.gamma_hat,
        r.gamma_exact,
        r.abs_error,
        r.binomial_se,
        r.misclassified_paths,
        r.truncated_paths,
        r.stop_time.mean,
        r.stop_time.median,
        r.stop_time.p90,
        r.stop_time.max
    )
}

fn execute(cli: Cli) -> Result<String, HarnessError> {
    match &cli.command {
        Command::Lb { config } => {
            let cfg = experiment(config, cli.parallelism)?;
            let sol = harness::cmd_lb(&cfg)?;
            let json = serde_json::to_string_pretty(&sol)? + "\n";
            let table = lb_table(&sol);
            write_out(&cli.out, &[("lb.json", &json), ("lb.csv", &table)])?;
            Ok(match cli.format {
                Format::Csv => table,
                Format::Json => json,
            })
        }
        Command::Run {
            config,
            delta,
            seed,
        } => {
            let cfg = experiment(config, cli.parallelism)?;
            let record = harness::cmd_run(&cfg, *delta, seed.unwrap_or(cfg.seed))?;
            let csv = records_csv(cfg.arms.len(), std::slice::from_ref(&record))?;
            let json = serde_json::to_string_pretty(&record)? + "\n";
            write_out(&cli.out, &[("run.csv", &csv), ("run.json", &json)])?;
            Ok(match cli.format {
                Format::Csv => csv,
                Format::Json => json,
            })
        }
        Command::Mc { config } => {
            let cfg = experiment(config, cli.parallelism)?;
            let out = harness::cmd_mc(&cfg)?;
            let json = serde_json::to_string_pretty(&out.report)? + "\n";
            write_out(&cli.out, &[("runs.csv", &out.csv), ("summary.json", &json)])?;
            Ok(match cli.format {
                Format::Csv => summary_table(&out.report),
                Format::Json => json,
            })
        }
        Command::RiskDemo { config } => {
            let cfg = risk(config, cli.parallelism)?;
            let (report, paths) = harness::cmd_risk_demo(&cfg)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            let csv = paths_csv(&paths)?;
            write_out(&cli.out, &[("paths.csv", &csv), ("summary.json", &json)])?;
            Ok(match cli.format {
                Format::Csv => risk_table(&report),
                Format::Json => json,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
