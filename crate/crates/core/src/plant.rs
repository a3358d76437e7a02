//! Single-track vehicle dynamics in path-relative (Frenet) coordinates.
//!
//! Three fidelity levels share the state layout
//! `[vx, vy, r, s, w, theta_dev, delta, throttle]` and the input
//! `[delta_rate, throttle_rate]`:
//!
//! * kinematic: valid down to standstill, `vy`/`r` slaved to the steering angle,
//! * dynamic: linear tire forces, singular at `vx -> 0`,
//! * fused: `lambda(vx) * f_dyn + (1 - lambda(vx)) * f_kin` with a cubic
//!   smoothstep `lambda` on `[blend_lo, blend_hi]`.
//!
//! All steps are one explicit RK4 step followed by projection onto the
//! physical limits (no reverse, steering stop, throttle saturation).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PlantError;

pub const GRAVITY: f64 = 9.81;
pub const STATE_DIM: usize = 8;
pub const INPUT_DIM: usize = 2;

pub(crate) const VX: usize = 0;
pub(crate) const VY: usize = 1;
pub(crate) const R: usize = 2;
pub(crate) const S: usize = 3;
pub(crate) const W: usize = 4;
pub(crate) const THETA: usize = 5;
pub(crate) const DELTA: usize = 6;
pub(crate) const TR: usize = 7;

const SINGULAR_TOL: f64 = 1e-6;
const STANDSTILL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
    pub s: f64,
    pub w: f64,
    pub theta_dev: f64,
    pub delta: f64,
    pub throttle: f64,
}

impl PlantState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.vx, self.vy, self.r, self.s, self.w, self.theta_dev, self.delta, self.throttle]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self {
            vx: a[VX],
            vy: a[VY],
            r: a[R],
            s: a[S],
            w: a[W],
            theta_dev: a[THETA],
            delta: a[DELTA],
            throttle: a[TR],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlRates {
    pub delta_rate: f64,
    pub throttle_rate: f64,
}

impl ControlRates {
    pub fn new(delta_rate: f64, throttle_rate: f64) -> Self {
        Self {
            delta_rate,
            throttle_rate,
        }
    }

    pub fn to_array(&self) -> [f64; INPUT_DIM] {
        [self.delta_rate, self.throttle_rate]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub lf: f64,
    pub lr: f64,
    pub cf: f64,
    pub cr: f64,
    /// Longitudinal force per unit throttle (N).
    pub drive_gain: f64,
    /// Aerodynamic drag coefficient (N s^2 / m^2).
    pub drag_coeff: f64,
    /// Longitudinal slope as a fraction, positive uphill.
    pub road_grade: f64,
    /// Steering-rate command delay in control periods.
    pub actuator_delay_steps: usize,
    pub blend_lo: f64,
    pub blend_hi: f64,
    /// Mechanical steering stop (rad).
    pub max_steer: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            yaw_inertia: 2500.0,
            lf: 1.2,
            lr: 1.4,
            cf: 40_000.0,
            cr: 45_000.0,
            drive_gain: 3000.0,
            drag_coeff: 0.4,
            road_grade: 0.0,
            actuator_delay_steps: 0,
            blend_lo: 0.5,
            blend_hi: 2.0,
            max_steer: 0.6,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("lf", self.lf),
            ("lr", self.lr),
            ("cf", self.cf),
            ("cr", self.cr),
            ("drive_gain", self.drive_gain),
            ("max_steer", self.max_steer),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PlantError::InvalidParams(name));
            }
        }
        if !(self.drag_coeff >= 0.0) {
            return Err(PlantError::InvalidParams("drag_coeff"));
        }
        if !self.road_grade.is_finite() {
            return Err(PlantError::InvalidParams("road_grade"));
        }
        if !(self.blend_lo >= 0.0 && self.blend_lo < self.blend_hi) {
            return Err(PlantError::InvalidParams("blend_lo/blend_hi"));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.lf + self.lr
    }

    /// Smooth kinematic-to-dynamic activation: 0 below `blend_lo`, 1 above
    /// `blend_hi`, C1 cubic in between.
    pub fn blend(&self, vx: f64) -> f64 {
        let t = ((vx - self.blend_lo) / (self.blend_hi - self.blend_lo)).clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    }
}

/// Multiplicative uniform ranges (fractions of the nominal value).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamRanges {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub lf: f64,
    pub lr: f64,
    pub cf: f64,
    pub cr: f64,
    pub drive_gain: f64,
    pub drag_coeff: f64,
}

impl ParamRanges {
    fn entries(&self) -> [(&'static str, f64); 8] {
        [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("lf", self.lf),
            ("lr", self.lr),
            ("cf", self.cf),
            ("cr", self.cr),
            ("drive_gain", self.drive_gain),
            ("drag_coeff", self.drag_coeff),
        ]
    }
}

/// Domain randomization applied to the digital-twin rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainRandomizationSpec {
    pub ranges: ParamRanges,
    /// Std of additive noise on `[delta_rate, throttle_rate]`.
    pub input_noise_std: [f64; 2],
    /// Std of additive noise on measured `[w, vx, vy, r, theta_dev]`.
    pub output_noise_std: [f64; 5],
    /// Std of the initial `[w, theta_dev]` offset.
    pub initial_offset_std: [f64; 2],
    /// Library paths eligible for path randomization; `*` stands for the
    /// whole training split.
    pub path_pool: Vec<String>,
}

impl Default for DomainRandomizationSpec {
    fn default() -> Self {
        Self {
            ranges: ParamRanges {
                mass: 0.1,
                yaw_inertia: 0.1,
                lf: 0.0,
                lr: 0.0,
                cf: 0.15,
                cr: 0.15,
                drive_gain: 0.1,
                drag_coeff: 0.2,
            },
            input_noise_std: [0.01, 0.02],
            output_noise_std: [0.02, 0.02, 0.01, 0.005, 0.005],
            initial_offset_std: [0.1, 0.02],
            path_pool: vec!["*".to_string()],
        }
    }
}

impl DomainRandomizationSpec {
    pub fn validate(&self) -> Result<(), PlantError> {
        for (name, r) in self.ranges.entries() {
            if !(0.0..1.0).contains(&r) {
                return Err(PlantError::InvalidSpec(format!(
                    "range for {name} must lie in [0, 1), got {r}"
                )));
            }
        }
        let stds = self
            .input_noise_std
            .iter()
            .chain(&self.output_noise_std)
            .chain(&self.initial_offset_std);
        if stds.clone().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(PlantError::InvalidSpec("noise stds must be finite and >= 0".into()));
        }
        if self.path_pool.is_empty() {
            return Err(PlantError::InvalidSpec("path_pool is empty".into()));
        }
        Ok(())
    }
}

/// Draws a randomized plant: every ranged parameter is scaled by
/// `1 + U(-range, range)`. Deterministic in `seed`.
pub fn sample_plant(
    dr: &DomainRandomizationSpec,
    nominal: &PlantParams,
    seed: u64,
) -> Result<PlantParams, PlantError> {
    dr.validate()?;
    nominal.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scale = |range: f64| 1.0 + range * (2.0 * rng.random::<f64>() - 1.0);
    let r = &dr.ranges;
    let mut p = nominal.clone();
    p.mass *= scale(r.mass);
    p.yaw_inertia *= scale(r.yaw_inertia);
    p.lf *= scale(r.lf);
    p.lr *= scale(r.lr);
    p.cf *= scale(r.cf);
    p.cr *= scale(r.cr);
    p.drive_gain *= scale(r.drive_gain);
    p.drag_coeff *= scale(r.drag_coeff);
    p.validate()?;
    Ok(p)
}

#[inline]
fn longitudinal_accel(vx: f64, throttle: f64, p: &PlantParams) -> f64 {
    (p.drive_gain * throttle - p.drag_coeff * vx * vx.abs() - p.mass * GRAVITY * p.road_grade) / p.mass
}

#[inline]
fn progress_denominator(w: f64, kappa: f64) -> Result<f64, PlantError> {
    let d = 1.0 - w * kappa;
    if d.abs() < SINGULAR_TOL {
        Err(PlantError::SingularGeometry(d.abs()))
    } else {
        Ok(d)
    }
}

/// Kinematic single-track vector field. `vy` and `r` follow the derivative of
/// the kinematic consistency relations `vy = vx lr tan(delta) / L`,
/// `r = vx tan(delta) / L`.
pub fn kinematic_derivative(
    x: &[f64; STATE_DIM],
    u: &[f64; INPUT_DIM],
    p: &PlantParams,
    kappa: f64,
) -> Result<[f64; STATE_DIM], PlantError> {
    let denom = progress_denominator(x[W], kappa)?;
    let l = p.wheelbase();
    let (vx, th, delta) = (x[VX], x[THETA], x[DELTA]);
    let tan_d = delta.tan();
    let sec2 = 1.0 + tan_d * tan_d;
    let s_dot = vx * th.cos() / denom;
    let vx_dot = longitudinal_accel(vx, x[TR], p);
    let yaw_rate = vx * tan_d / l;
    let yaw_accel = (vx_dot * tan_d + vx * sec2 * u[0]) / l;
    Ok([
        vx_dot,
        p.lr * yaw_accel,
        yaw_accel,
        s_dot,
        vx * th.sin(),
        yaw_rate - kappa * s_dot,
        u[0],
        u[1],
    ])
}

/// Dynamic single-track vector field with linear tires.
pub fn dynamic_derivative(
    x: &[f64; STATE_DIM],
    u: &[f64; INPUT_DIM],
    p: &PlantParams,
    kappa: f64,
) -> Result<[f64; STATE_DIM], PlantError> {
    let (vx, vy, r, th, delta) = (x[VX], x[VY], x[R], x[THETA], x[DELTA]);
    if vx < STANDSTILL {
        return Err(PlantError::Standstill(vx));
    }
    let denom = progress_denominator(x[W], kappa)?;
    let alpha_f = delta - ((vy + p.lf * r) / vx).atan();
    let alpha_r = -((vy - p.lr * r) / vx).atan();
    let fyf = p.cf * alpha_f;
    let fyr = p.cr * alpha_r;
    let cos_d = delta.cos();
    let (sin_th, cos_th) = th.sin_cos();
    let s_dot = (vx * cos_th - vy * sin_th) / denom;
    Ok([
        longitudinal_accel(vx, x[TR], p),
        (fyf * cos_d + fyr) / p.mass - vx * r,
        (p.lf * fyf * cos_d - p.lr * fyr) / p.yaw_inertia,
        s_dot,
        vx * sin_th + vy * cos_th,
        r - kappa * s_dot,
        u[0],
        u[1],
    ])
}

/// Blended vector field. The dynamic contribution is skipped when its weight
/// is zero and evaluated with `vx` floored at `blend_lo` otherwise.
pub fn fused_derivative(
    x: &[f64; STATE_DIM],
    u: &[f64; INPUT_DIM],
    p: &PlantParams,
    kappa: f64,
) -> Result<[f64; STATE_DIM], PlantError> {
    let lambda = p.blend(x[VX]);
    if lambda <= 0.0 {
        return kinematic_derivative(x, u, p, kappa);
    }
    let mut xd = *x;
    xd[VX] = xd[VX].max(p.blend_lo).max(STANDSTILL);
    let f_dyn = dynamic_derivative(&xd, u, p, kappa)?;
    if lambda >= 1.0 {
        return Ok(f_dyn);
    }
    let f_kin = kinematic_derivative(x, u, p, kappa)?;
    let mut out = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        out[i] = lambda * f_dyn[i] + (1.0 - lambda) * f_kin[i];
    }
    Ok(out)
}

type VectorField =
    fn(&[f64; STATE_DIM], &[f64; INPUT_DIM], &PlantParams, f64) -> Result<[f64; STATE_DIM], PlantError>;

#[inline]
fn axpy(x: &[f64; STATE_DIM], h: f64, k: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
    let mut out = *x;
    for i in 0..STATE_DIM {
        out[i] += h * k[i];
    }
    out
}

pub(crate) fn rk4_raw(
    f: VectorField,
    x: &[f64; STATE_DIM],
    u: &[f64; INPUT_DIM],
    p: &PlantParams,
    kappa: f64,
    dt: f64,
) -> Result<[f64; STATE_DIM], PlantError> {
    let k1 = f(x, u, p, kappa)?;
    let k2 = f(&axpy(x, 0.5 * dt, &k1), u, p, kappa)?;
    let k3 = f(&axpy(x, 0.5 * dt, &k2), u, p, kappa)?;
    let k4 = f(&axpy(x, dt, &k3), u, p, kappa)?;
    let mut out = *x;
    for i in 0..STATE_DIM {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Physical limits: no reverse, steering stop, throttle saturation.
#[inline]
pub(crate) fn project_limits(x: &mut [f64; STATE_DIM], p: &PlantParams) {
    x[VX] = x[VX].max(0.0);
    x[DELTA] = x[DELTA].clamp(-p.max_steer, p.max_steer);
    x[TR] = x[TR].clamp(-1.0, 1.0);
}

fn step_with(
    f: VectorField,
    x: &PlantState,
    u: &ControlRates,
    p: &PlantParams,
    kappa: f64,
    dt: f64,
) -> Result<PlantState, PlantError> {
    let mut next = rk4_raw(f, &x.to_array(), &u.to_array(), p, kappa, dt)?;
    project_limits(&mut next, p);
    Ok(PlantState::from_array(next))
}

pub fn step_kinematic(
    x: &PlantState,
    u: &ControlRates,
    p: &PlantParams,
    kappa: f64,
    dt: f64,
) -> Result<PlantState, PlantError> {
    step_with(kinematic_derivative, x, u, p, kappa, dt)
}

pub fn step_dynamic(
    x: &PlantState,
    u: &ControlRates,
    p: &PlantParams,
    kappa: f64,
    dt: f64,
) -> Result<PlantState, PlantError> {
    step_with(dynamic_derivative, x, u, p, kappa, dt)
}

pub fn step_fused(
    x: &PlantState,
    u: &ControlRates,
    p: &PlantParams,
    kappa: f64,
    dt: f64,
) -> Result<PlantState, PlantError> {
    step_with(fused_derivative, x, u, p, kappa, dt)
}

/// Array form of [`step_fused`] used by the controller's shooting loop.
#[inline]
pub(crate) fn step_fused_raw(
    x: &[f64; STATE_DIM],
    u: &[f64; INPUT_DIM],
    p: &PlantParams,
    kappa: f64,
    dt: f64,
) -> Result<[f64; STATE_DIM], PlantError> {
    let mut next = rk4_raw(fused_derivative, x, u, p, kappa, dt)?;
    project_limits(&mut next, p);
    Ok(next)
}
