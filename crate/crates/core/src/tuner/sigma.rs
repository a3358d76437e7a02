use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::jittered_cholesky;
use super::{ParameterBelief, TunerHyperparams};
use crate::error::TunerError;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet {
    /// `n x (2n + 1)`: column 0 is the mean, columns `j` and `j + n` are
    /// `theta +- c_k A^j`.
    pub points: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// Cholesky factor of `P`.
    pub chol: DMatrix<f64>,
    pub c_k: f64,
    pub spsa_delta: DVector<f64>,
    /// Realized SPSA perturbation `p = c * sqrt(diag P) * delta`.
    pub spsa_perturbation: DVector<f64>,
    pub spsa_plus: DVector<f64>,
    pub spsa_minus: DVector<f64>,
}

impl SigmaSet {
    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.points.column(j).into_owned()
    }
}

/// `(w0, wj)` of the unscented transform.
pub fn ut_weights(n: usize, lambda: f64) -> (f64, f64) {
    let spread = n as f64 + lambda;
    (lambda / spread, 1.0 / (2.0 * spread))
}

/// Largest `c` such that `theta +- c * dir` stays in the box.
fn bound_scale(theta: &DVector<f64>, dir: impl Iterator<Item = (usize, f64)>, hp: &TunerHyperparams) -> f64 {
    let mut c = f64::INFINITY;
    for (i, d) in dir {
        if d != 0.0 {
            let room = (hp.theta_max[i] - theta[i]).min(theta[i] - hp.theta_min[i]);
            c = c.min(room / d.abs());
        }
    }
    c.max(0.0)
}

pub fn generate_sigma_points(
    belief: &ParameterBelief,
    hp: &TunerHyperparams,
    seed: u64,
) -> Result<SigmaSet, TunerError> {
    let n = belief.theta.len();
    if n != hp.theta_min.len() {
        return Err(TunerError::Dimension {
            expected: hp.theta_min.len(),
            actual: n,
        });
    }
    for i in 0..n {
        let t = belief.theta[i];
        if !(t >= hp.theta_min[i] && t <= hp.theta_max[i]) {
            return Err(TunerError::DegenerateBounds(i));
        }
    }
    let chol = jittered_cholesky(&belief.p)?;
    let c0 = hp.c0();
    let mut c_k = c0;
    for j in 0..n {
        let col = chol.column(j);
        c_k = c_k.min(bound_scale(&belief.theta, col.iter().copied().enumerate(), hp));
    }

    let mut points = DMatrix::zeros(n, 2 * n + 1);
    points.set_column(0, &belief.theta);
    for j in 0..n {
        let step = chol.column(j) * c_k;
        points.set_column(1 + j, &(&belief.theta + &step));
        points.set_column(1 + n + j, &(&belief.theta - &step));
    }
    let (w0, wj) = ut_weights(n, hp.lambda_ut);
    let mut weights = DVector::from_element(2 * n + 1, wj);
    weights[0] = w0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spsa_delta = DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    let sqrt_p = DVector::from_fn(n, |i, _| belief.p[(i, i)].max(0.0).sqrt());
    let dir = sqrt_p.component_mul(&spsa_delta);
    let c_spsa = c0.min(bound_scale(&belief.theta, dir.iter().copied().enumerate(), hp));
    let spsa_perturbation = dir * c_spsa;
    Ok(SigmaSet {
        spsa_plus: &belief.theta + &spsa_perturbation,
        spsa_minus: &belief.theta - &spsa_perturbation,
        points,
        weights,
        chol,
        c_k,
        spsa_delta,
        spsa_perturbation,
    })
}
