use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::TunerHyperparams;

/// `theta + w delta_ukf + (1 - w) delta_spsa`, then projected onto the box
/// (shrunk by the boundary margin). Returns `(fused step, candidate)`.
pub fn fuse_and_update(
    theta: &DVector<f64>,
    delta_ukf: &DVector<f64>,
    delta_spsa: &DVector<f64>,
    w: f64,
    hp: &TunerHyperparams,
) -> (DVector<f64>, DVector<f64>) {
    let fused = delta_ukf * w + delta_spsa * (1.0 - w);
    let raw = theta + &fused;
    (fused, project(&raw, hp))
}

pub fn project(theta: &DVector<f64>, hp: &TunerHyperparams) -> DVector<f64> {
    DVector::from_fn(theta.len(), |i, _| {
        let (lo, hi) = (hp.theta_min[i], hp.theta_max[i]);
        let pad = hp.boundary_margin * (hi - lo);
        theta[i].clamp(lo + pad, hi - pad)
    })
}

/// Forgetting-factor recursions for the process and output noise covariances.
pub fn adapt_covariances(
    c_dtheta: &DMatrix<f64>,
    c_v: &DMatrix<f64>,
    delta_theta: &DVector<f64>,
    epsilon: &DVector<f64>,
    c_yy: &DMatrix<f64>,
    k: usize,
    alpha: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let k2 = (k * k) as f64;
    let c_dtheta_next = c_dtheta * alpha + delta_theta * delta_theta.transpose() * ((1.0 - alpha) / k2);
    let c_v_next = c_v * alpha + (c_yy + epsilon * epsilon.transpose()) * ((1.0 - alpha) / k2);
    (c_dtheta_next, c_v_next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyClause {
    /// The candidate diverged on the nominal twin.
    Unstable,
    OutOfBounds,
    /// Controller cost grew by more than the margin.
    CostIncrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub accepted: bool,
    pub failed: Option<SafetyClause>,
    /// `H_cost(candidate) / H_cost(current)`.
    pub ratio: f64,
}

pub fn safety_verdict(
    candidate: &DVector<f64>,
    completed: bool,
    candidate_cost: f64,
    current_cost: f64,
    hp: &TunerHyperparams,
) -> SafetyVerdict {
    let ratio = if current_cost == 0.0 {
        if candidate_cost == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        candidate_cost / current_cost
    };
    let in_bounds = candidate
        .iter()
        .enumerate()
        .all(|(i, &t)| t >= hp.theta_min[i] && t <= hp.theta_max[i]);
    let failed = if !completed {
        Some(SafetyClause::Unstable)
    } else if !in_bounds {
        Some(SafetyClause::OutOfBounds)
    } else if !(candidate_cost <= (1.0 + hp.safety_margin) * current_cost) {
        Some(SafetyClause::CostIncrease)
    } else {
        None
    };
    SafetyVerdict {
        accepted: failed.is_none(),
        failed,
        ratio,
    }
}
