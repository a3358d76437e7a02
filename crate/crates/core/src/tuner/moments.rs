use nalgebra::{DMatrix, DVector};

use super::linalg::{psd_repair, spd_inverse};
use super::sigma::SigmaSet;
use super::ParameterBelief;
use crate::error::TunerError;

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub theta_bar: DVector<f64>,
    pub p_pred: DMatrix<f64>,
    pub y_bar: DVector<f64>,
    pub p_theta_y: DMatrix<f64>,
    pub c_yy: DMatrix<f64>,
    pub p_yy: DMatrix<f64>,
}

/// Weighted unscented moments of the sigma points and their outputs `y[j]`.
pub fn unscented_moments(
    sigma: &SigmaSet,
    y: &[DVector<f64>],
    belief: &ParameterBelief,
) -> Result<Moments, TunerError> {
    let cols = sigma.points.ncols();
    if y.len() != cols {
        return Err(TunerError::Dimension {
            expected: cols,
            actual: y.len(),
        });
    }
    let m = belief.c_v.nrows();
    if let Some(bad) = y.iter().find(|v| v.len() != m) {
        return Err(TunerError::Dimension {
            expected: m,
            actual: bad.len(),
        });
    }
    let n = sigma.n();
    let w = &sigma.weights;

    let mut theta_bar = DVector::zeros(n);
    let mut y_bar = DVector::zeros(m);
    for j in 0..cols {
        theta_bar += sigma.points.column(j) * w[j];
        y_bar += &y[j] * w[j];
    }
    let mut spread = DMatrix::zeros(n, n);
    let mut p_theta_y = DMatrix::zeros(n, m);
    let mut c_yy = DMatrix::zeros(m, m);
    for j in 0..cols {
        let dt = sigma.points.column(j) - &theta_bar;
        let dy = &y[j] - &y_bar;
        spread += &dt * dt.transpose() * w[j];
        p_theta_y += &dt * dy.transpose() * w[j];
        c_yy += &dy * dy.transpose() * w[j];
    }
    let p_pred = psd_repair(&(&belief.c_dtheta + spread));
    let c_yy = psd_repair(&c_yy);
    let p_yy = &belief.c_v + &c_yy;
    Ok(Moments {
        theta_bar,
        p_pred,
        y_bar,
        p_theta_y,
        c_yy,
        p_yy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanStep {
    pub gain: DMatrix<f64>,
    pub delta_ukf: DVector<f64>,
    pub posterior: DMatrix<f64>,
}

/// `K = P_thetay P_yy^-1`, `delta = -K V`, `P = P_pred - K P_yy K^T`.
pub fn kalman_step(moments: &Moments, v_real: &DVector<f64>) -> Result<KalmanStep, TunerError> {
    if v_real.len() != moments.p_yy.nrows() {
        return Err(TunerError::Dimension {
            expected: moments.p_yy.nrows(),
            actual: v_real.len(),
        });
    }
    let inv = spd_inverse(&moments.p_yy)?;
    let gain = &moments.p_theta_y * inv;
    let delta_ukf = -(&gain * v_real);
    let posterior = psd_repair(&(&moments.p_pred - &gain * &moments.p_yy * gain.transpose()));
    Ok(KalmanStep {
        gain,
        delta_ukf,
        posterior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_moments(p_theta_y: f64, p_yy: f64) -> Moments {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        Moments {
            theta_bar: DVector::from_element(1, 0.0),
            p_pred: one(1.0),
            y_bar: DVector::from_element(1, 0.0),
            p_theta_y: one(p_theta_y),
            c_yy: one(p_yy - 1.0),
            p_yy: one(p_yy),
        }
    }

    #[test]
    fn scalar_gain() {
        let k = kalman_step(&scalar_moments(2.0, 4.0), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(k.gain[(0, 0)], 0.5);
        assert_eq!(k.delta_ukf[0], -0.5);
    }

    #[test]
    fn zero_innovation_still_contracts() {
        let k = kalman_step(&scalar_moments(0.5, 4.0), &DVector::from_element(1, 0.0)).unwrap();
        assert_eq!(k.delta_ukf[0], 0.0);
        assert!((k.posterior[(0, 0)] - (1.0 - 0.125 * 0.5)).abs() < 1e-15);
    }
}
