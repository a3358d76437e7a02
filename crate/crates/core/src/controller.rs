//! Parametrizable receding-horizon controller.
//!
//! The optimal control problem is transcribed by single shooting over the
//! fused curvilinear model and solved with a fixed number of projected
//! Gauss-Newton iterations. Sensitivities come from central finite differences
//! of the vector field, discretized exactly for the RK4 sub-steps used by the
//! shooting loop. Each Gauss-Newton subproblem is an unconstrained LQ problem
//! solved by a backward Riccati sweep; the input box is then enforced by
//! projection and a monotone backtracking line search.

use nalgebra::{Matrix2, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::ControllerError;
use crate::path::PathGeometry;
use crate::plant::{
    fused_derivative, step_fused_raw, ControlRates, PlantParams, PlantState, DELTA, INPUT_DIM, R, S,
    STATE_DIM, THETA, TR, VX, VY, W,
};

/// Number of penalized state errors `(vx - v_ref, vy, r, w, theta_dev, delta, throttle)`.
pub const N_Q: usize = 7;
pub const N_R: usize = 2;
pub const N_THETA: usize = N_Q + N_R;

/// Weight of the quadratic state-box penalty.
pub const STATE_PENALTY: f64 = 1e3;
/// Relative central-difference step.
pub const FD_STEP: f64 = 1e-5;

type M8 = SMatrix<f64, STATE_DIM, STATE_DIM>;
type M82 = SMatrix<f64, STATE_DIM, INPUT_DIM>;
type M28 = SMatrix<f64, INPUT_DIM, STATE_DIM>;
type V8 = SVector<f64, STATE_DIM>;
type V2 = SVector<f64, INPUT_DIM>;

/// Diagonal cost weights: `q` on the 7 state errors, `r` on the 2 input rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub q: [f64; N_Q],
    pub r: [f64; N_R],
}

impl ControllerParams {
    pub fn unity() -> Self {
        Self {
            q: [1.0; N_Q],
            r: [1.0; N_R],
        }
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self, ControllerError> {
        if theta.len() != N_THETA {
            return Err(ControllerError::Length {
                expected: N_THETA,
                actual: theta.len(),
            });
        }
        let mut q = [0.0; N_Q];
        let mut r = [0.0; N_R];
        q.copy_from_slice(&theta[..N_Q]);
        r.copy_from_slice(&theta[N_Q..]);
        let p = Self { q, r };
        p.validate()?;
        Ok(p)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.q.iter().chain(&self.r).copied().collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            q: self.q.map(|v| v * c),
            r: self.r.map(|v| v * c),
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        for (index, &value) in self.q.iter().enumerate() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ControllerError::Indefinite { index, value });
            }
        }
        for (i, &value) in self.r.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ControllerError::Indefinite { index: N_Q + i, value });
            }
        }
        Ok(())
    }
}

/// Diagonal `Q` (7x7) and `R` (2x2). Progress `s` carries no weight.
pub fn assemble_weights(
    theta: &ControllerParams,
) -> Result<(SMatrix<f64, N_Q, N_Q>, Matrix2<f64>), ControllerError> {
    theta.validate()?;
    let q = SMatrix::<f64, N_Q, N_Q>::from_diagonal(&SVector::from(theta.q));
    let r = Matrix2::from_diagonal(&SVector::from(theta.r));
    Ok((q, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpConfig {
    /// Prediction horizon (s).
    pub horizon: f64,
    /// Shooting intervals.
    pub steps: usize,
    /// RK4 sub-steps per shooting interval.
    pub substeps: usize,
    /// Box on `[vx, vy, r, s, w, theta_dev, delta, throttle]`; the `w` entries
    /// are replaced by the path's lane tube.
    pub state_lower: [f64; STATE_DIM],
    pub state_upper: [f64; STATE_DIM],
    pub input_lower: [f64; INPUT_DIM],
    pub input_upper: [f64; INPUT_DIM],
    pub sqp_iters: usize,
    pub warm_start: bool,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            steps: 30,
            substeps: 2,
            state_lower: [0.0, -2.0, -1.5, -1e6, -1.5, -1.0, -0.5, -1.0],
            state_upper: [6.0, 2.0, 1.5, 1e6, 1.5, 1.0, 0.5, 1.0],
            input_lower: [-0.6, -1.5],
            input_upper: [0.6, 1.5],
            sqp_iters: 2,
            warm_start: true,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::Config(m.to_string()));
        if !(self.horizon > 0.0) {
            return bad("horizon must be > 0");
        }
        if self.steps < 2 {
            return bad("steps must be >= 2");
        }
        if self.substeps < 1 || self.sqp_iters < 1 {
            return bad("substeps and sqp_iters must be >= 1");
        }
        for i in 0..STATE_DIM {
            if !(self.state_lower[i] < self.state_upper[i]) {
                return bad("state bounds need min < max");
            }
        }
        for i in 0..INPUT_DIM {
            if !(self.input_lower[i] < self.input_upper[i]) {
                return bad("input bounds need min < max");
            }
        }
        Ok(())
    }

    pub fn stage_dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    fn project(&self, u: &mut [f64; INPUT_DIM]) {
        for i in 0..INPUT_DIM {
            u[i] = u[i].clamp(self.input_lower[i], self.input_upper[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Solved,
    /// No finite-cost candidate was found.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyResult {
    pub first_action: ControlRates,
    /// Optimal cost of the returned input trajectory (`+inf` on failure).
    pub cost: f64,
    pub inputs: Vec<[f64; INPUT_DIM]>,
    /// Predicted states at the shooting nodes, `states[0] == x0`.
    pub states: Vec<PlantState>,
    pub status: SolverStatus,
    /// Objective after the warm start and after every Gauss-Newton iteration.
    pub objective_history: Vec<f64>,
}

struct Problem<'a> {
    path: &'a PathGeometry,
    model: &'a PlantParams,
    cfg: &'a OcpConfig,
    q: [f64; N_Q],
    r: [f64; N_R],
    dt: f64,
    lower: [f64; STATE_DIM],
    upper: [f64; STATE_DIM],
}

struct Rollout {
    states: Vec<[f64; STATE_DIM]>,
    cost: f64,
}

impl<'a> Problem<'a> {
    fn new(path: &'a PathGeometry, theta: &ControllerParams, cfg: &'a OcpConfig, model: &'a PlantParams) -> Self {
        let mut lower = cfg.state_lower;
        let mut upper = cfg.state_upper;
        lower[W] = path.lane_left;
        upper[W] = path.lane_right;
        Self {
            path,
            model,
            cfg,
            q: theta.q,
            r: theta.r,
            dt: cfg.stage_dt(),
            lower,
            upper,
        }
    }

    fn errors(&self, x: &[f64; STATE_DIM]) -> [f64; N_Q] {
        let v_ref = self.path.eval(x[S]).speed_ref;
        [x[VX] - v_ref, x[VY], x[R], x[W], x[THETA], x[DELTA], x[TR]]
    }

    fn violation(&self, x: &[f64; STATE_DIM], i: usize) -> f64 {
        if x[i] > self.upper[i] {
            x[i] - self.upper[i]
        } else if x[i] < self.lower[i] {
            x[i] - self.lower[i]
        } else {
            0.0
        }
    }

    fn state_cost(&self, x: &[f64; STATE_DIM]) -> f64 {
        let e = self.errors(x);
        let tracking: f64 = e.iter().zip(&self.q).map(|(e, q)| q * e * e).sum();
        let penalty: f64 = (0..STATE_DIM)
            .filter(|&i| i != S)
            .map(|i| self.violation(x, i).powi(2))
            .sum();
        self.dt * (tracking + STATE_PENALTY * penalty)
    }

    fn input_cost(&self, u: &[f64; INPUT_DIM]) -> f64 {
        self.dt * (self.r[0] * u[0] * u[0] + self.r[1] * u[1] * u[1])
    }

    fn advance(&self, x: &[f64; STATE_DIM], u: &[f64; INPUT_DIM]) -> Option<[f64; STATE_DIM]> {
        let h = self.dt / self.cfg.substeps as f64;
        let mut x = *x;
        for _ in 0..self.cfg.substeps {
            let kappa = self.path.eval(x[S]).curvature;
            x = step_fused_raw(&x, u, self.model, kappa, h).ok()?;
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    /// Simulates the input sequence; non-finite or singular trajectories cost `+inf`.
    fn simulate(&self, x0: &[f64; STATE_DIM], inputs: &[[f64; INPUT_DIM]]) -> Rollout {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(*x0);
        let mut cost = 0.0;
        for u in inputs {
            let last = states[states.len() - 1];
            match self.advance(&last, u) {
                Some(next) => {
                    cost += self.input_cost(u) + self.state_cost(&next);
                    states.push(next);
                }
                None => {
                    return Rollout {
                        states,
                        cost: f64::INFINITY,
                    }
                }
            }
        }
        if !cost.is_finite() {
            cost = f64::INFINITY;
        }
        Rollout { states, cost }
    }

    fn vector_field(&self, x: &[f64; STATE_DIM], u: &[f64; INPUT_DIM]) -> Option<[f64; STATE_DIM]> {
        let kappa = self.path.eval(x[S]).curvature;
        fused_derivative(x, u, self.model, kappa).ok()
    }

    /// Continuous-time Jacobians by central differences, then the exact
    /// Jacobians of `substeps` RK4 steps of the frozen linearization.
    fn linearize(&self, x: &[f64; STATE_DIM], u: &[f64; INPUT_DIM]) -> Option<(M8, M82)> {
        let mut ac = M8::zeros();
        let mut bc = M82::zeros();
        for j in 0..STATE_DIM {
            let h = FD_STEP * x[j].abs().max(1.0);
            let (mut xp, mut xm) = (*x, *x);
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (self.vector_field(&xp, u)?, self.vector_field(&xm, u)?);
            for i in 0..STATE_DIM {
                ac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for j in 0..INPUT_DIM {
            let h = FD_STEP * u[j].abs().max(1.0);
            let (mut up, mut um) = (*u, *u);
            up[j] += h;
            um[j] -= h;
            let (fp, fm) = (self.vector_field(x, &up)?, self.vector_field(x, &um)?);
            for i in 0..STATE_DIM {
                bc[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let h = self.dt / self.cfg.substeps as f64;
        let z = ac * h;
        let z2 = z * z;
        let z3 = z2 * z;
        let id = M8::identity();
        let amp = id + z + z2 * 0.5 + z3 / 6.0 + z3 * z / 24.0;
        let phi = (id + z * 0.5 + z2 / 6.0 + z3 / 24.0) * bc * h;
        let mut a = id;
        let mut b = M82::zeros();
        for _ in 0..self.cfg.substeps {
            b = amp * b + phi;
            a = amp * a;
        }
        a.iter().chain(b.iter()).all(|v| v.is_finite()).then_some((a, b))
    }

    /// Gauss-Newton gradient and Hessian of the state cost at `x`.
    fn state_quadratic(&self, x: &[f64; STATE_DIM]) -> (M8, V8) {
        let p = self.path.eval(x[S]);
        let e = self.errors(x);
        let two_dt = 2.0 * self.dt;
        let mut hess = M8::zeros();
        let mut grad = V8::zeros();
        // e0 = vx - v_ref(s) couples vx and s
        let jac0 = [(VX, 1.0), (S, -p.speed_slope)];
        for &(a, da) in &jac0 {
            grad[a] += two_dt * self.q[0] * e[0] * da;
            for &(b, db) in &jac0 {
                hess[(a, b)] += two_dt * self.q[0] * da * db;
            }
        }
        for (k, &idx) in [VY, R, W, THETA, DELTA, TR].iter().enumerate() {
            grad[idx] += two_dt * self.q[k + 1] * e[k + 1];
            hess[(idx, idx)] += two_dt * self.q[k + 1];
        }
        for i in 0..STATE_DIM {
            if i == S {
                continue;
            }
            let v = self.violation(x, i);
            if v != 0.0 {
                grad[i] += two_dt * STATE_PENALTY * v;
                hess[(i, i)] += two_dt * STATE_PENALTY;
            }
        }
        (hess, grad)
    }

    /// One Gauss-Newton direction for the input sequence, or `None` if the
    /// linearization hits a singular point.
    fn gauss_newton_direction(&self, rollout: &Rollout, inputs: &[[f64; INPUT_DIM]]) -> Option<Vec<V2>> {
        let n = inputs.len();
        let mut jac = Vec::with_capacity(n);
        for k in 0..n {
            jac.push(self.linearize(&rollout.states[k], &inputs[k])?);
        }
        let r_hess = Matrix2::new(2.0 * self.dt * self.r[0], 0.0, 0.0, 2.0 * self.dt * self.r[1]);

        let (mut s_mat, mut s_vec) = self.state_quadratic(&rollout.states[n]);
        let mut gains: Vec<(M28, V2)> = vec![(M28::zeros(), V2::zeros()); n];
        for k in (0..n).rev() {
            let (a, b) = &jac[k];
            let u = V2::from(inputs[k]);
            let bt_s = b.transpose() * s_mat;
            let quu = r_hess + bt_s * b;
            let qux = bt_s * a;
            let qu = r_hess * u + b.transpose() * s_vec;
            let quu_inv = quu.try_inverse()?;
            let gain = -quu_inv * qux;
            let ff = -quu_inv * qu;
            if k > 0 {
                let (hx, gx) = self.state_quadratic(&rollout.states[k]);
                let qxx = hx + a.transpose() * s_mat * a;
                let qx = gx + a.transpose() * s_vec;
                s_mat = qxx + qux.transpose() * gain;
                s_mat = (s_mat + s_mat.transpose()) * 0.5;
                s_vec = qx + qux.transpose() * ff;
            }
            gains[k] = (gain, ff);
        }

        let mut dx = V8::zeros();
        let mut dirs = Vec::with_capacity(n);
        for k in 0..n {
            let (gain, ff) = &gains[k];
            let du = ff + gain * dx;
            let (a, b) = &jac[k];
            dx = a * dx + b * du;
            dirs.push(du);
        }
        Some(dirs)
    }
}

/// Solves the finite-horizon problem from `x0` with weights `theta` on the
/// prediction `model`. `warm` seeds the input sequence (zeros otherwise).
/// Deterministic in its arguments.
pub fn solve_ocp(
    x0: &PlantState,
    path: &PathGeometry,
    theta: &ControllerParams,
    cfg: &OcpConfig,
    model: &PlantParams,
    warm: Option<&[[f64; INPUT_DIM]]>,
) -> Result<PolicyResult, ControllerError> {
    theta.validate()?;
    let problem = Problem::new(path, theta, cfg, model);
    let x0a = x0.to_array();
    let n = cfg.steps;

    let mut inputs: Vec<[f64; INPUT_DIM]> = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![[0.0; INPUT_DIM]; n],
    };
    inputs.iter_mut().for_each(|u| cfg.project(u));
    let mut current = problem.simulate(&x0a, &inputs);
    if !current.cost.is_finite() && warm.is_some() {
        inputs = vec![[0.0; INPUT_DIM]; n];
        current = problem.simulate(&x0a, &inputs);
    }
    if !current.cost.is_finite() {
        return Ok(PolicyResult {
            first_action: ControlRates::default(),
            cost: f64::INFINITY,
            inputs,
            states: current.states.into_iter().map(PlantState::from_array).collect(),
            status: SolverStatus::Failed,
            objective_history: vec![f64::INFINITY],
        });
    }

    let mut history = vec![current.cost];
    for _ in 0..cfg.sqp_iters {
        let Some(dirs) = problem.gauss_newton_direction(&current, &inputs) else {
            break;
        };
        let mut improved = false;
        let mut step = 1.0;
        for _ in 0..6 {
            let candidate: Vec<[f64; INPUT_DIM]> = inputs
                .iter()
                .zip(&dirs)
                .map(|(u, d)| {
                    let mut c = [u[0] + step * d[0], u[1] + step * d[1]];
                    cfg.project(&mut c);
                    c
                })
                .collect();
            let trial = problem.simulate(&x0a, &candidate);
            if trial.cost < current.cost {
                inputs = candidate;
                current = trial;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        history.push(current.cost);
        if !improved {
            break;
        }
    }

    Ok(PolicyResult {
        first_action: ControlRates::new(inputs[0][0], inputs[0][1]),
        cost: current.cost,
        inputs,
        states: current.states.into_iter().map(PlantState::from_array).collect(),
        status: SolverStatus::Solved,
        objective_history: history,
    })
}

/// Output of one control decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub action: ControlRates,
    /// Performance-relevant controller cost for this step (`J*` for the MPC).
    pub cost: f64,
    pub status: SolverStatus,
}

/// A closed-loop policy that sees measured states.
pub trait Policy {
    fn act(&mut self, measured: &PlantState, path: &PathGeometry) -> PolicyOutput;
}

/// Stateful MPC wrapper owning the warm-start buffer. One instance per rollout.
#[derive(Debug, Clone)]
pub struct MpcController {
    theta: ControllerParams,
    cfg: OcpConfig,
    model: PlantParams,
    control_period: f64,
    warm: Option<Vec<[f64; INPUT_DIM]>>,
    last: PolicyOutput,
}

impl MpcController {
    pub fn new(
        theta: ControllerParams,
        cfg: OcpConfig,
        model: PlantParams,
        control_period: f64,
    ) -> Result<Self, ControllerError> {
        theta.validate()?;
        cfg.validate()?;
        Ok(Self {
            theta,
            cfg,
            model,
            control_period,
            warm: None,
            last: PolicyOutput {
                action: ControlRates::default(),
                cost: 0.0,
                status: SolverStatus::Solved,
            },
        })
    }

    /// Shifts the solution by one control period (linear interpolation between
    /// shooting nodes, last input repeated).
    fn shift(&self, inputs: &[[f64; INPUT_DIM]]) -> Vec<[f64; INPUT_DIM]> {
        let frac = self.control_period / self.cfg.stage_dt();
        let n = inputs.len();
        (0..n)
            .map(|k| {
                let pos = k as f64 + frac;
                let i = (pos.floor() as usize).min(n - 1);
                let j = (i + 1).min(n - 1);
                let t = (pos - i as f64).clamp(0.0, 1.0);
                [
                    inputs[i][0] + t * (inputs[j][0] - inputs[i][0]),
                    inputs[i][1] + t * (inputs[j][1] - inputs[i][1]),
                ]
            })
            .collect()
    }
}

impl Policy for MpcController {
    fn act(&mut self, measured: &PlantState, path: &PathGeometry) -> PolicyOutput {
        let warm = if self.cfg.warm_start { self.warm.as_deref() } else { None };
        let result = solve_ocp(measured, path, &self.theta, &self.cfg, &self.model, warm)
            .expect("weights validated at construction");
        if result.status == SolverStatus::Failed {
            self.warm = None;
            self.last.status = SolverStatus::Failed;
            return self.last;
        }
        self.warm = Some(self.shift(&result.inputs));
        self.last = PolicyOutput {
            action: result.first_action,
            cost: result.cost,
            status: SolverStatus::Solved,
        };
        self.last
    }
}

/// Integral and error-rate memory of the two PID loops.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidMemory {
    pub lateral_integral: f64,
    pub longitudinal_integral: f64,
    pub lateral_rate: f64,
    pub longitudinal_rate: f64,
}

/// Two decoupled PIDs: lateral error `w` drives the steering rate and speed
/// error `vx - v_ref` drives the throttle rate. Gains are
/// `[kp_lat, ki_lat, kd_lat, kp_lon, ki_lon, kd_lon]`; outputs saturate at the
/// input box.
pub fn pid_policy(
    x: &PlantState,
    gains: &[f64; 6],
    path: &PathGeometry,
    memory: &PidMemory,
    cfg: &OcpConfig,
) -> ControlRates {
    let e_lat = x.w;
    let e_lon = x.vx - path.eval(x.s).speed_ref;
    let mut u = [
        -(gains[0] * e_lat + gains[1] * memory.lateral_integral + gains[2] * memory.lateral_rate),
        -(gains[3] * e_lon + gains[4] * memory.longitudinal_integral + gains[5] * memory.longitudinal_rate),
    ];
    cfg.project(&mut u);
    ControlRates::new(u[0], u[1])
}

/// Stateful PID policy; reports the instantaneous quadratic effort as its cost.
#[derive(Debug, Clone)]
pub struct PidController {
    pub gains: [f64; 6],
    cfg: OcpConfig,
    dt: f64,
    memory: PidMemory,
    prev_errors: Option<(f64, f64)>,
}

impl PidController {
    pub fn new(gains: [f64; 6], cfg: OcpConfig, dt: f64) -> Self {
        Self {
            gains,
            cfg,
            dt,
            memory: PidMemory::default(),
            prev_errors: None,
        }
    }
}

impl Policy for PidController {
    fn act(&mut self, measured: &PlantState, path: &PathGeometry) -> PolicyOutput {
        let e_lat = measured.w;
        let e_lon = measured.vx - path.eval(measured.s).speed_ref;
        self.memory.lateral_integral += e_lat * self.dt;
        self.memory.longitudinal_integral += e_lon * self.dt;
        if let Some((pl, po)) = self.prev_errors {
            self.memory.lateral_rate = (e_lat - pl) / self.dt;
            self.memory.longitudinal_rate = (e_lon - po) / self.dt;
        }
        self.prev_errors = Some((e_lat, e_lon));
        let action = pid_policy(measured, &self.gains, path, &self.memory, &self.cfg);
        PolicyOutput {
            action,
            cost: action.delta_rate.powi(2) + action.throttle_rate.powi(2),
            status: SolverStatus::Solved,
        }
    }
}
