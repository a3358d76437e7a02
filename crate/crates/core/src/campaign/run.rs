use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::error::CampaignError;
use crate::executor::{execute_batch, job_seed, resolve_workers, JobId, JobKind};
use crate::oracle::{run_oracle, RmsMetrics, TraceRow};
use crate::path::PathGeometry;
use crate::tuner::{
    run_tuning, tune_iteration, EvalJob, ParameterBelief, TunerHyperparams, TunerMode, TuningEnvironment,
    UpdateReport,
};

use super::config::CampaignConfig;
use super::env::VehicleEnvironment;

/// One line of `iterations.csv`. Iteration `K` is the final evaluation row:
/// it has target metrics but no update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub kpi: f64,
    pub h_path: f64,
    pub h_velocity: f64,
    pub h_cost: f64,
    pub target_completed: bool,
    pub path: String,
    pub trace_p: Option<f64>,
    pub trace_c_dtheta: Option<f64>,
    pub trace_c_v: Option<f64>,
    pub c_k: Option<f64>,
    pub a_k: Option<f64>,
    pub accepted: Option<bool>,
    pub safety_ratio: Option<f64>,
}

/// Mean and standard deviation of the sigma-rollout outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadRow {
    pub iteration: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub tuning: String,
    pub path: String,
    pub h_path: f64,
    pub h_velocity: f64,
    pub h_cost: f64,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub campaign_seed: u64,
    pub mode: TunerMode,
    pub iterations: Vec<IterationRow>,
    pub spread: Vec<SpreadRow>,
    pub validation: Vec<ValidationRow>,
    pub final_theta: Vec<f64>,
    pub accepted_updates: usize,
    pub train_paths: Vec<String>,
    pub validation_paths: Vec<String>,
}

impl CampaignSummary {
    pub fn kpi(&self, iteration: usize) -> Option<f64> {
        self.iterations.get(iteration).map(|r| r.kpi)
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn spread_row(iteration: usize, sigma_y: &[Vec<f64>], diverged: usize) -> SpreadRow {
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        (mean[c], std[c]) = mean_std(sigma_y.iter().map(|y| y[c]));
    }
    SpreadRow {
        iteration,
        mean,
        std,
        diverged,
    }
}

fn target_job(seed: u64, k: usize, theta: &[f64]) -> EvalJob {
    let id = JobId {
        k,
        index: 0,
        kind: JobKind::Target,
    };
    EvalJob {
        id,
        theta: theta.to_vec(),
        seed: job_seed(seed, id),
    }
}

fn report_row(env: &VehicleEnvironment, r: &UpdateReport) -> IterationRow {
    IterationRow {
        iteration: r.k - 1,
        theta: r.theta.clone(),
        kpi: r.target_kpi(),
        h_path: r.target_y[0],
        h_velocity: r.target_y[1],
        h_cost: r.target_y[2],
        target_completed: r.target_completed,
        path: env.path_for(r.k).name.clone(),
        trace_p: Some(r.trace_p),
        trace_c_dtheta: Some(r.trace_c_dtheta),
        trace_c_v: Some(r.trace_c_v),
        c_k: Some(r.c_k),
        a_k: Some(r.a_k),
        accepted: Some(r.accepted()),
        safety_ratio: Some(r.verdict.ratio),
    }
}

/// Everything a campaign produces besides the summary: the per-iteration
/// reports and, when enabled, target traces keyed by iteration.
#[derive(Debug, Clone)]
pub struct CampaignRun {
    pub summary: CampaignSummary,
    pub reports: Vec<UpdateReport>,
    pub belief: ParameterBelief,
    pub traces: Vec<(usize, Vec<TraceRow>)>,
}

/// K tuning iterations against the target plant, a final target evaluation,
/// and a unity-vs-tuned validation on the held-out paths.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignRun, CampaignError> {
    cfg.validate()?;
    let workers = resolve_workers(cfg.workers);
    let paths = cfg.resolve_paths()?;
    let env = VehicleEnvironment::new(cfg, paths);
    let hp = &cfg.hyperparams;
    let seed = cfg.campaign_seed;

    let mut belief = ParameterBelief::with_output_dim(DVector::from_column_slice(&cfg.theta0), 3, hp);
    let mut reports = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let (next, report) = tune_iteration(&belief, &env, hp, seed, workers)?;
        belief = next;
        reports.push(report);
    }

    let mut iterations: Vec<IterationRow> = reports.iter().map(|r| report_row(&env, r)).collect();
    let final_theta: Vec<f64> = belief.theta.iter().copied().collect();
    let final_k = cfg.iterations + 1;
    let last = env
        .evaluate(&target_job(seed, final_k, &final_theta))
        .map_err(|e| CampaignError::config("target_plant", e))?;
    iterations.push(IterationRow {
        iteration: cfg.iterations,
        theta: final_theta.clone(),
        kpi: 0.5 * last.y.iter().map(|v| v * v).sum::<f64>(),
        h_path: last.y[0],
        h_velocity: last.y[1],
        h_cost: last.y[2],
        target_completed: last.completed,
        path: env.path_for(final_k).name.clone(),
        trace_p: None,
        trace_c_dtheta: None,
        trace_c_v: None,
        c_k: None,
        a_k: None,
        accepted: None,
        safety_ratio: None,
    });

    let spread = reports
        .iter()
        .map(|r| spread_row(r.k - 1, &r.sigma_y, r.sigma_completed.iter().filter(|c| !**c).count()))
        .collect();

    let validation_paths = env.paths().validation();
    let mut validation = Vec::new();
    for (label, theta) in [("unity", cfg.theta0.as_slice()), ("tuned", final_theta.as_slice())] {
        validation.extend(validate_params(theta, cfg, validation_paths, workers)?.into_iter().map(|(name, h, done)| {
            ValidationRow {
                tuning: label.to_string(),
                path: name,
                h_path: h.path,
                h_velocity: h.velocity,
                h_cost: h.cost,
                completed: done,
            }
        }));
    }

    let mut traces = Vec::new();
    if cfg.traces {
        for (i, row) in iterations.iter().enumerate() {
            let (_, rows) = env
                .evaluate_traced(&target_job(seed, i + 1, &row.theta))
                .map_err(|e| CampaignError::config("traces", e))?;
            traces.push((i, rows));
        }
    }

    let summary = CampaignSummary {
        campaign_seed: seed,
        mode: hp.mode,
        accepted_updates: reports.iter().filter(|r| r.accepted()).count(),
        iterations,
        spread,
        validation,
        final_theta,
        train_paths: env.paths().train().iter().map(|p| p.name.clone()).collect(),
        validation_paths: validation_paths.iter().map(|p| p.name.clone()).collect(),
    };
    Ok(CampaignRun {
        summary,
        reports,
        belief,
        traces,
    })
}

/// Noiseless target-plant rollout of `theta` on each path.
pub fn validate_params(
    theta: &[f64],
    cfg: &CampaignConfig,
    paths: &[PathGeometry],
    workers: usize,
) -> Result<Vec<(String, RmsMetrics, bool)>, CampaignError> {
    let params = ControllerParams::from_slice(theta).map_err(|e| CampaignError::config("theta", e.to_string()))?;
    let mut rollout = cfg.rollout.clone();
    rollout.prediction_model = cfg.nominal_plant.clone();
    rollout.input_noise_std = [0.0; 2];
    rollout.output_noise_std = [0.0; 5];
    rollout.seed = 0;
    let outcomes = execute_batch(paths, workers, |path| {
        run_oracle(&params, &cfg.target_plant, path, &rollout).map_err(|e| e.to_string())
    });
    paths
        .iter()
        .zip(outcomes)
        .map(|(path, out)| match out {
            Ok(rec) => Ok((path.name.clone(), rec.rms(), rec.completed)),
            Err(f) => Err(CampaignError::config("rollout", format!("{}: {}", path.name, f.message))),
        })
        .collect()
}

/// Mean validation `H_path` of `theta` over `paths`.
pub fn aggregate_path_error(
    theta: &[f64],
    cfg: &CampaignConfig,
    paths: &[PathGeometry],
    workers: usize,
) -> Result<f64, CampaignError> {
    let table = validate_params(theta, cfg, paths, workers)?;
    Ok(table.iter().map(|(_, h, _)| h.path).sum::<f64>() / table.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub mode: TunerMode,
    pub seed: u64,
    pub iteration: usize,
    /// Target KPI of the iterate entering this iteration.
    pub kpi: f64,
    /// Trace of `P` after this iteration's update.
    pub trace_p: f64,
    pub accepted: bool,
    pub theta: Vec<f64>,
}

/// Runs every mode on identical seeds and collects KPI and trace(P) series.
pub fn run_mode_comparison<E: TuningEnvironment>(
    make_env: impl Fn(u64) -> E,
    hp: &TunerHyperparams,
    theta0: &[f64],
    iterations: usize,
    seeds: &[u64],
    modes: &[TunerMode],
    workers: usize,
) -> Result<Vec<BaselineRow>, CampaignError> {
    let mut rows = Vec::new();
    for &mode in modes {
        let hp_mode = TunerHyperparams { mode, ..hp.clone() };
        for &seed in seeds {
            let env = make_env(seed);
            let (_, reports) = run_tuning(&env, &hp_mode, theta0, iterations, seed, workers)?;
            rows.extend(reports.iter().map(|r| BaselineRow {
                mode,
                seed,
                iteration: r.k,
                kpi: r.target_kpi(),
                trace_p: r.trace_p,
                accepted: r.accepted(),
                theta: r.theta.clone(),
            }));
        }
    }
    Ok(rows)
}

/// AUKS, constant-covariance and UKF-only on the configured vehicle scenario,
/// one campaign per seed `campaign_seed + i`.
pub fn run_baseline_suite(cfg: &CampaignConfig, seeds: usize) -> Result<Vec<BaselineRow>, CampaignError> {
    cfg.validate()?;
    let paths = cfg.resolve_paths()?;
    let seeds: Vec<u64> = (0..seeds as u64).map(|i| cfg.campaign_seed.wrapping_add(i)).collect();
    run_mode_comparison(
        |seed| {
            let c = CampaignConfig {
                campaign_seed: seed,
                ..cfg.clone()
            };
            VehicleEnvironment::new(&c, paths.clone())
        },
        &cfg.hyperparams,
        &cfg.theta0,
        cfg.iterations,
        &seeds,
        &[TunerMode::Auks, TunerMode::ConstantCovariance, TunerMode::UkfOnly],
        resolve_workers(cfg.workers),
    )
}

/// Outcome of tuning on the first path only (case A) versus with path
/// randomization (case B), scored on the held-out paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseComparison {
    pub seed: u64,
    pub unity_h_path: f64,
    pub case_a_h_path: f64,
    pub case_b_h_path: f64,
    pub case_a_theta: Vec<f64>,
    pub case_b_theta: Vec<f64>,
}

pub fn compare_cases(cfg: &CampaignConfig, seed: u64) -> Result<CaseComparison, CampaignError> {
    let workers = resolve_workers(cfg.workers);
    let tuned = |randomize: bool| -> Result<Vec<f64>, CampaignError> {
        let mut c = cfg.clone();
        c.campaign_seed = seed;
        c.paths.path_randomization = randomize;
        let paths = c.resolve_paths()?;
        let env = VehicleEnvironment::new(&c, paths);
        let (belief, _) = run_tuning(&env, &c.hyperparams, &c.theta0, c.iterations, seed, workers)?;
        Ok(belief.theta.iter().copied().collect())
    };
    let a = tuned(false)?;
    let b = tuned(true)?;
    let paths = cfg.resolve_paths()?;
    let held_out = paths.validation();
    Ok(CaseComparison {
        seed,
        unity_h_path: aggregate_path_error(&cfg.theta0, cfg, held_out, workers)?,
        case_a_h_path: aggregate_path_error(&a, cfg, held_out, workers)?,
        case_b_h_path: aggregate_path_error(&b, cfg, held_out, workers)?,
        case_a_theta: a,
        case_b_theta: b,
    })
}
