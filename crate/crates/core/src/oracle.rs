//! Closed-loop rollouts: one episode of plant, controller, noise and actuator
//! delay, reduced to the stacked error vector and its RMS metrics.

use std::collections::VecDeque;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerParams, MpcController, OcpConfig, Policy, SolverStatus};
use crate::error::OracleError;
use crate::path::PathGeometry;
use crate::plant::{step_fused, ControlRates, PlantParams, PlantState};

/// Measured channels carrying output noise, in draw order.
pub const OUTPUT_CHANNELS: [&str; 5] = ["w", "vx", "vy", "r", "theta_dev"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    /// Window length `T` (s).
    pub window: f64,
    /// Control and measurement period (s).
    pub dt: f64,
    pub seed: u64,
    /// Std of the additive noise on `(delta_rate, throttle_rate)`.
    pub input_noise_std: [f64; 2],
    /// Std of the additive noise on `(w, vx, vy, r, theta_dev)`.
    pub output_noise_std: [f64; 5],
    pub initial_state: PlantState,
    /// Multipliers on `(y_path, y_velocity, y_cost)`.
    pub output_scale: [f64; 3],
    pub ocp: OcpConfig,
    /// Model the controller predicts with (the nominal plant).
    pub prediction_model: PlantParams,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            window: 85.0,
            dt: 0.05,
            seed: 0,
            input_noise_std: [0.0; 2],
            output_noise_std: [0.0; 5],
            initial_state: PlantState::default(),
            output_scale: [1.0; 3],
            ocp: OcpConfig::default(),
            prediction_model: PlantParams::default(),
        }
    }
}

impl RolloutConfig {
    /// `N_T = T / dt`, which must be an integer to within 1e-9.
    pub fn steps(&self) -> Result<usize, OracleError> {
        if !(self.window > 0.0 && self.dt > 0.0 && self.window.is_finite()) {
            return Err(OracleError::Config("window and dt must be positive".into()));
        }
        let ratio = self.window / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 || n < 1.0 {
            return Err(OracleError::Config(format!(
                "window {} is not a whole number of periods {}",
                self.window, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        self.steps()?;
        let stds = self.input_noise_std.iter().chain(&self.output_noise_std);
        if stds.clone().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(OracleError::Config("noise stds must be finite and >= 0".into()));
        }
        if self.output_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(OracleError::Config("output scales must be > 0".into()));
        }
        if !self.initial_state.is_finite() {
            return Err(OracleError::Config("initial state must be finite".into()));
        }
        self.ocp.validate()?;
        self.prediction_model
            .validate()
            .map_err(|e| OracleError::Config(format!("prediction model: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub y_path: Vec<f64>,
    pub y_velocity: Vec<f64>,
    pub y_cost: Vec<f64>,
    /// Reached the window end without divergence.
    pub completed: bool,
    /// Samples recorded before divergence (`N_T` when completed).
    pub recorded: usize,
    pub solver_failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsMetrics {
    pub path: f64,
    pub velocity: f64,
    pub cost: f64,
}

impl RmsMetrics {
    pub fn to_array(&self) -> [f64; 3] {
        [self.path, self.velocity, self.cost]
    }
}

fn rms(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    (series.iter().map(|v| v * v).sum::<f64>() / series.len() as f64).sqrt()
}

impl PerformanceRecord {
    pub fn len(&self) -> usize {
        self.y_path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_path.is_empty()
    }

    pub fn stack(&self) -> Vec<f64> {
        stack_performance(self)
    }

    pub fn rms(&self) -> RmsMetrics {
        rms_metrics(self)
    }

    pub fn kpi(&self) -> f64 {
        kpi(&self.stack())
    }
}

/// `V = [y_path; y_velocity; y_cost]` (the references are zero).
pub fn stack_performance(record: &PerformanceRecord) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * record.len());
    v.extend_from_slice(&record.y_path);
    v.extend_from_slice(&record.y_velocity);
    v.extend_from_slice(&record.y_cost);
    v
}

pub fn rms_metrics(record: &PerformanceRecord) -> RmsMetrics {
    RmsMetrics {
        path: rms(&record.y_path),
        velocity: rms(&record.y_velocity),
        cost: rms(&record.y_cost),
    }
}

/// `|V|^2 / (2 N_T)` with `N_T = len(V) / 3`.
pub fn kpi(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n_t = v.len() as f64 / 3.0;
    v.iter().map(|x| x * x).sum::<f64>() / (2.0 * n_t)
}

/// One row of the optional per-step trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub state: PlantState,
    pub cost: f64,
    pub applied: ControlRates,
}

pub const TRACE_HEADER: &str = "t,vx,vy,r,s,w,theta_dev,delta,throttle,J,u1,u2";

pub fn write_trace(out: &mut impl Write, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for row in rows {
        let x = row.state;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.t,
            x.vx,
            x.vy,
            x.r,
            x.s,
            x.w,
            x.theta_dev,
            x.delta,
            x.throttle,
            row.cost,
            row.applied.delta_rate,
            row.applied.throttle_rate
        )?;
    }
    Ok(())
}

/// MPC rollout with weights `theta` on `plant`.
pub fn run_oracle(
    theta: &ControllerParams,
    plant: &PlantParams,
    path: &PathGeometry,
    cfg: &RolloutConfig,
) -> Result<PerformanceRecord, OracleError> {
    run_oracle_traced(theta, plant, path, cfg, None)
}

pub fn run_oracle_traced(
    theta: &ControllerParams,
    plant: &PlantParams,
    path: &PathGeometry,
    cfg: &RolloutConfig,
    trace: Option<&mut Vec<TraceRow>>,
) -> Result<PerformanceRecord, OracleError> {
    cfg.validate()?;
    let mut mpc = MpcController::new(*theta, cfg.ocp.clone(), cfg.prediction_model.clone(), cfg.dt)?;
    run_policy(&mut mpc, plant, path, cfg, trace)
}

/// Closed loop with an arbitrary policy. Every step draws five output normals
/// then two input normals, so noise streams do not depend on the trajectory.
pub fn run_policy(
    policy: &mut dyn Policy,
    plant: &PlantParams,
    path: &PathGeometry,
    cfg: &RolloutConfig,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<PerformanceRecord, OracleError> {
    let n_t = cfg.steps()?;
    let mut plant = plant.clone();
    plant.road_grade += path.grade;
    plant
        .validate()
        .map_err(|e| OracleError::Config(format!("plant: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let divergence = 10.0 * path.lane_left.abs().max(path.lane_right);
    let mut delay: VecDeque<f64> = std::iter::repeat_n(0.0, plant.actuator_delay_steps).collect();
    let mut record = PerformanceRecord {
        y_path: Vec::with_capacity(n_t),
        y_velocity: Vec::with_capacity(n_t),
        y_cost: Vec::with_capacity(n_t),
        completed: true,
        recorded: 0,
        solver_failures: 0,
    };
    let [scale_path, scale_vel, scale_cost] = cfg.output_scale;

    let mut x = cfg.initial_state;
    for k in 0..n_t {
        let mut v = [0.0; 5];
        for (vi, std) in v.iter_mut().zip(&cfg.output_noise_std) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *vi = std * z;
        }
        let mut n_in = [0.0; 2];
        for (ni, std) in n_in.iter_mut().zip(&cfg.input_noise_std) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *ni = std * z;
        }

        let measured = PlantState {
            w: x.w + v[0],
            vx: (x.vx + v[1]).max(0.0),
            vy: x.vy + v[2],
            r: x.r + v[3],
            theta_dev: x.theta_dev + v[4],
            ..x
        };
        let out = policy.act(&measured, path);
        if out.status == SolverStatus::Failed {
            record.solver_failures += 1;
        }
        record.y_path.push(scale_path * measured.w);
        record
            .y_velocity
            .push(scale_vel * (measured.vx - path.eval(x.s).speed_ref));
        record.y_cost.push(scale_cost * out.cost);
        record.recorded = k + 1;

        let mut applied = ControlRates::new(out.action.delta_rate + n_in[0], out.action.throttle_rate + n_in[1]);
        if plant.actuator_delay_steps > 0 {
            delay.push_back(applied.delta_rate);
            applied.delta_rate = delay.pop_front().unwrap_or(0.0);
        }
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(TraceRow {
                t: k as f64 * cfg.dt,
                state: x,
                cost: out.cost,
                applied,
            });
        }

        let kappa = path.eval(x.s).curvature;
        let next = step_fused(&x, &applied, &plant, kappa, cfg.dt);
        match next {
            Ok(nx) if nx.is_finite() && nx.w.abs() <= divergence => x = nx,
            _ => {
                record.completed = false;
                break;
            }
        }
    }

    if !record.completed {
        for series in [&mut record.y_path, &mut record.y_velocity, &mut record.y_cost] {
            let last = *series.last().unwrap_or(&0.0);
            series.resize(n_t, last);
        }
    }
    Ok(record)
}
