//! Cheap analytic oracles for exercising the tuner.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::executor::JobKind;
use crate::tuner::{EvalJob, Evaluation, TuningEnvironment};

fn noise(seed: u64, m: usize, std: f64) -> DVector<f64> {
    if std == 0.0 {
        return DVector::zeros(m);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(m, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        std * z
    })
}

/// `y = M (theta - theta_star) + noise`, with an optional constant bias on the
/// target system only.
#[derive(Debug, Clone)]
pub struct AffineOracle {
    pub m: DMatrix<f64>,
    pub theta_star: DVector<f64>,
    pub twin_noise_std: f64,
    pub target_noise_std: f64,
    pub target_bias: DVector<f64>,
}

impl AffineOracle {
    pub fn new(m: DMatrix<f64>, theta_star: DVector<f64>) -> Self {
        let rows = m.nrows();
        Self {
            m,
            theta_star,
            twin_noise_std: 0.0,
            target_noise_std: 0.0,
            target_bias: DVector::zeros(rows),
        }
    }

    pub fn mean_output(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.m * (theta - &self.theta_star)
    }
}

impl TuningEnvironment for AffineOracle {
    fn output_dim(&self) -> usize {
        self.m.nrows()
    }

    fn evaluate(&self, job: &EvalJob) -> Result<Evaluation, String> {
        let theta = DVector::from_column_slice(&job.theta);
        let mut y = self.mean_output(&theta);
        match job.id.kind {
            JobKind::Target => y += &self.target_bias + noise(job.seed, y.len(), self.target_noise_std),
            JobKind::Safety => {}
            _ => y += noise(job.seed, y.len(), self.twin_noise_std),
        }
        let norm = y.norm();
        Ok(Evaluation {
            y: y.iter().copied().collect(),
            completed: true,
            safety_cost: norm,
        })
    }
}

/// Two-parameter surface with a shallow well and a deeper, narrower well.
/// The scalar output is `y = 1 - a_l g_l(theta) - a_g g_g(theta)` with
/// Gaussian bumps `g`, so the KPI `y^2 / 2` has a local minimum near the
/// shallow centre and the global minimum near the deep one.
#[derive(Debug, Clone)]
pub struct BimodalSurface {
    pub shallow_center: [f64; 2],
    pub shallow_depth: f64,
    pub shallow_width: f64,
    pub deep_center: [f64; 2],
    pub deep_depth: f64,
    pub deep_width: f64,
    pub twin_noise_std: f64,
    pub target_noise_std: f64,
}

impl Default for BimodalSurface {
    fn default() -> Self {
        Self {
            shallow_center: [3.0, 3.0],
            shallow_depth: 0.5,
            shallow_width: 1.0,
            deep_center: [5.0, 1.0],
            deep_depth: 1.0,
            deep_width: 0.8,
            twin_noise_std: 0.02,
            target_noise_std: 0.02,
        }
    }
}

impl BimodalSurface {
    fn bump(theta: &[f64], center: [f64; 2], width: f64) -> f64 {
        let d2 = (theta[0] - center[0]).powi(2) + (theta[1] - center[1]).powi(2);
        (-d2 / (2.0 * width * width)).exp()
    }

    pub fn output(&self, theta: &[f64]) -> f64 {
        1.0 - self.shallow_depth * Self::bump(theta, self.shallow_center, self.shallow_width)
            - self.deep_depth * Self::bump(theta, self.deep_center, self.deep_width)
    }

    pub fn kpi(&self, theta: &[f64]) -> f64 {
        0.5 * self.output(theta).powi(2)
    }

    /// Closer to the deep centre than to the shallow one and below the
    /// shallow well's KPI.
    pub fn in_deep_basin(&self, theta: &[f64]) -> bool {
        let d = |c: [f64; 2]| (theta[0] - c[0]).hypot(theta[1] - c[1]);
        d(self.deep_center) < d(self.shallow_center) && self.kpi(theta) < self.kpi(&self.shallow_center)
    }
}

impl TuningEnvironment for BimodalSurface {
    fn output_dim(&self) -> usize {
        1
    }

    fn evaluate(&self, job: &EvalJob) -> Result<Evaluation, String> {
        let clean = self.output(&job.theta);
        let y = match job.id.kind {
            JobKind::Target => clean + noise(job.seed, 1, self.target_noise_std)[0],
            JobKind::Safety => clean,
            _ => clean + noise(job.seed, 1, self.twin_noise_std)[0],
        };
        Ok(Evaluation {
            y: vec![y],
            completed: true,
            safety_cost: clean.abs(),
        })
    }
}
