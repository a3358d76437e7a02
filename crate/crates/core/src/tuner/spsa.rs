use nalgebra::DVector;

use crate::error::TunerError;

/// Two-sided simultaneous-perturbation gradient along the realized
/// perturbation `p`, and the step `-a_k * ghat`.
pub fn spsa_step(
    l_plus: f64,
    l_minus: f64,
    perturbation: &DVector<f64>,
    a_k: f64,
) -> Result<(DVector<f64>, DVector<f64>), TunerError> {
    if let Some(i) = perturbation.iter().position(|p| p.abs() < 1e-12) {
        return Err(TunerError::ZeroPerturbation(i));
    }
    let diff = l_plus - l_minus;
    let ghat = perturbation.map(|p| diff / (2.0 * p));
    let step = &ghat * -a_k;
    Ok((ghat, step))
}

/// `a_{k+1} = a0 / (|y0|^2 + k^0.602)`.
pub fn schedule_step_size(a0: f64, y0_norm_sq: f64, k: usize) -> f64 {
    a0 / (y0_norm_sq + (k as f64).powf(0.602))
}
