use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use twintune::campaign::{
    baseline_csv, cases_csv, compare_cases, run_baseline_suite, run_campaign, validate_params, write_bytes,
    write_campaign, CampaignConfig,
};
use twintune::error::CampaignError;
use twintune::executor::resolve_workers;
use twintune::path::bundled_paths;
use twintune::tuner::TunerMode;

#[derive(Parser)]
#[command(name = "twintune", version, about = "Controller-weight auto-calibration on digital twins")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a tuning campaign.
    Tune {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// auks | const | ukf | spsa
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Noiseless target-plant rollouts of one parameter vector on the
    /// held-out paths (or every path with --all).
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV file with nine comma-separated weights.
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// AUKS vs constant covariance vs UKF-only on identical seeds.
    Baseline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fixed-path (case A) vs path-randomized (case B) tuning, scored on the
    /// held-out paths.
    Cases {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default configuration as JSON.
    DefaultConfig,
    /// Write the bundled paths as CSV files into a directory.
    ExportPaths { dir: PathBuf },
}

fn load(config: Option<&Path>) -> Result<CampaignConfig, CampaignError> {
    match config {
        Some(p) => CampaignConfig::load(p),
        None => Ok(CampaignConfig::default()),
    }
}

fn out_dir(cli: Option<PathBuf>, cfg: &CampaignConfig) -> PathBuf {
    cli.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn read_theta(file: &Path) -> Result<Vec<f64>, CampaignError> {
    let text = std::fs::read_to_string(file).map_err(|e| CampaignError::Io(file.display().to_string(), e))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CampaignError::config("theta", format!("`{t}` is not a number")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CampaignError> {
    match cli.command {
        Command::Tune {
            config,
            workers,
            mode,
            seed,
            iterations,
            out,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(m) = mode {
                cfg.hyperparams.mode =
                    TunerMode::parse(&m).ok_or_else(|| CampaignError::config("mode", format!("unknown mode `{m}`")))?;
            }
            cfg.campaign_seed = seed.unwrap_or(cfg.campaign_seed);
            cfg.iterations = iterations.unwrap_or(cfg.iterations);
            cfg.workers = workers.or(cfg.workers);
            let dir = out_dir(out, &cfg);
            let run = run_campaign(&cfg)?;
            write_campaign(&dir, &run.summary, &run.traces)?;
            println!("iteration  kpi        H_path    H_vel     H_cost    accepted");
            for r in &run.summary.iterations {
                println!(
                    "{:>9}  {:<9.5}  {:<8.4}  {:<8.4}  {:<8.4}  {}",
                    r.iteration,
                    r.kpi,
                    r.h_path,
                    r.h_velocity,
                    r.h_cost,
                    r.accepted.map(|a| a.to_string()).unwrap_or_else(|| "-".into())
                );
            }
            println!("final theta {:?}", run.summary.final_theta);
            println!("outputs in {}", dir.display());
        }
        Command::Validate {
            config,
            theta,
            all,
            workers,
        } => {
            let cfg = load(config.as_deref())?;
            let theta = read_theta(&theta)?;
            let set = cfg.resolve_paths()?;
            let paths = if all { &set.all[..] } else { set.validation() };
            let table = validate_params(&theta, &cfg, paths, resolve_workers(workers.or(cfg.workers)))?;
            println!("path,H_path,H_velocity,H_cost,completed");
            for (name, h, done) in table {
                println!("{name},{},{},{},{done}", h.path, h.velocity, h.cost);
            }
        }
        Command::Baseline {
            config,
            seeds,
            workers,
            out,
        } => {
            let mut cfg = load(config.as_deref())?;
            cfg.workers = workers.or(cfg.workers);
            let rows = run_baseline_suite(&cfg, seeds)?;
            let dir = out_dir(out, &cfg);
            write_bytes(&dir, "baseline.csv", &baseline_csv(&rows)?)?;
            println!("{} rows written to {}", rows.len(), dir.join("baseline.csv").display());
        }
        Command::Cases {
            config,
            seeds,
            workers,
            out,
        } => {
            let mut cfg = load(config.as_deref())?;
            cfg.workers = workers.or(cfg.workers);
            let rows = (0..seeds as u64)
                .map(|i| compare_cases(&cfg, cfg.campaign_seed.wrapping_add(i)))
                .collect::<Result<Vec<_>, _>>()?;
            for r in &rows {
                println!(
                    "seed {}: unity {:.4}  case A {:.4}  case B {:.4}",
                    r.seed, r.unity_h_path, r.case_a_h_path, r.case_b_h_path
                );
            }
            let dir = out_dir(out, &cfg);
            write_bytes(&dir, "cases.csv", &cases_csv(&rows)?)?;
        }
        Command::DefaultConfig => println!("{}", CampaignConfig::default().to_json()),
        Command::ExportPaths { dir } => {
            for p in bundled_paths() {
                write_bytes(&dir, &format!("{}.csv", p.name), p.to_csv_string().as_bytes())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
