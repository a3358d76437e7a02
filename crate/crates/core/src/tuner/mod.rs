//! Derivative-free tuner fusing an iterated unscented Kalman step with an
//! SPSA step, with adaptive noise covariances and a nominal-twin safety check.

pub mod linalg;
pub mod moments;
pub mod sigma;
pub mod spsa;
pub mod update;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::TunerError;
use crate::executor::{derive_seed, execute_batch, job_seed, JobId, JobKind};

pub use moments::{kalman_step, unscented_moments, KalmanStep, Moments};
pub use sigma::{generate_sigma_points, ut_weights, SigmaSet};
pub use spsa::{schedule_step_size, spsa_step};
pub use update::{adapt_covariances, fuse_and_update, project, safety_verdict, SafetyClause, SafetyVerdict};

/// Seed stream for the SPSA Bernoulli directions.
const DELTA_STREAM: u64 = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunerMode {
    /// Fused UKF + SPSA step with adaptive covariances.
    Auks,
    /// Fused step, covariances held at their initial values.
    ConstantCovariance,
    /// Kalman step only (`w = 1`), constant covariances.
    UkfOnly,
    /// SPSA step only (`w = 0`), adaptive covariances.
    SpsaOnly,
}

impl TunerMode {
    pub fn name(self) -> &'static str {
        match self {
            TunerMode::Auks => "auks",
            TunerMode::ConstantCovariance => "const",
            TunerMode::UkfOnly => "ukf",
            TunerMode::SpsaOnly => "spsa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "auks" => Some(TunerMode::Auks),
            "const" | "constant" | "constant_covariance" => Some(TunerMode::ConstantCovariance),
            "ukf" | "ukf_only" => Some(TunerMode::UkfOnly),
            "spsa" | "spsa_only" => Some(TunerMode::SpsaOnly),
            _ => None,
        }
    }

    fn adaptive(self) -> bool {
        matches!(self, TunerMode::Auks | TunerMode::SpsaOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunerHyperparams {
    /// Unscented spread; `n + lambda = 3` for nine parameters.
    pub lambda_ut: f64,
    pub fusion_w: f64,
    /// Forgetting factor of the covariance recursions, in `[0, 1)`.
    pub alpha: f64,
    pub a0: f64,
    /// Safety margin `R` on the nominal-twin controller cost.
    pub safety_margin: f64,
    pub theta_min: Vec<f64>,
    pub theta_max: Vec<f64>,
    /// Candidates are projected onto the box shrunk by this fraction of its
    /// width on each side, so the next sigma set keeps a nonzero spread.
    pub boundary_margin: f64,
    pub mode: TunerMode,
    /// Initial `P`, `C_dtheta` and `C_v` are these multiples of the identity.
    pub p0: f64,
    pub c_dtheta0: f64,
    pub c_v0: f64,
}

impl Default for TunerHyperparams {
    fn default() -> Self {
        Self {
            lambda_ut: -6.0,
            fusion_w: 0.5,
            alpha: 0.95,
            a0: 1.0,
            safety_margin: 0.1,
            theta_min: vec![0.05; 9],
            theta_max: vec![50.0; 9],
            boundary_margin: 1e-3,
            mode: TunerMode::Auks,
            p0: 1.0,
            c_dtheta0: 1.0,
            c_v0: 1.0,
        }
    }
}

impl TunerHyperparams {
    pub fn n_theta(&self) -> usize {
        self.theta_min.len()
    }

    pub fn c0(&self) -> f64 {
        (self.n_theta() as f64 + self.lambda_ut).sqrt()
    }

    /// Mixing weight after the mode override.
    pub fn effective_w(&self) -> f64 {
        match self.mode {
            TunerMode::UkfOnly => 1.0,
            TunerMode::SpsaOnly => 0.0,
            _ => self.fusion_w,
        }
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        let bad = |m: String| Err(TunerError::Hyperparams(m));
        let n = self.n_theta();
        if n == 0 || self.theta_max.len() != n {
            return bad(format!("bounds need equal nonzero lengths, got {} and {}", n, self.theta_max.len()));
        }
        if !(n as f64 + self.lambda_ut > 0.0) {
            return bad("n_theta + lambda_ut must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.fusion_w) {
            return bad("fusion_w must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1)".into());
        }
        if !(self.a0 > 0.0) || !(self.safety_margin >= 0.0) {
            return bad("a0 must be > 0 and safety_margin >= 0".into());
        }
        if !(0.0..0.5).contains(&self.boundary_margin) {
            return bad("boundary_margin must lie in [0, 0.5)".into());
        }
        if !(self.p0 > 0.0 && self.c_dtheta0 >= 0.0 && self.c_v0 >= 0.0) {
            return bad("initial covariance scales must be p0 > 0, others >= 0".into());
        }
        for i in 0..n {
            if !(self.theta_min[i] > 0.0 && self.theta_min[i] < self.theta_max[i]) {
                return bad(format!("bounds at {i} need 0 < min < max"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBelief {
    pub theta: DVector<f64>,
    pub p: DMatrix<f64>,
    pub c_dtheta: DMatrix<f64>,
    pub c_v: DMatrix<f64>,
    /// Iteration counter, starting at 1.
    pub k: usize,
    pub a_k: f64,
    /// Nominal-twin `H_cost` of the current theta on the fixed safety scenario.
    pub safety_baseline: Option<f64>,
}

impl ParameterBelief {
    /// Initial belief for a three-dimensional reduced output.
    pub fn initial(theta0: DVector<f64>, hp: &TunerHyperparams) -> Self {
        Self::with_output_dim(theta0, 3, hp)
    }

    pub fn with_output_dim(theta0: DVector<f64>, m: usize, hp: &TunerHyperparams) -> Self {
        let n = theta0.len();
        Self {
            theta: theta0,
            p: DMatrix::identity(n, n) * hp.p0,
            c_dtheta: DMatrix::identity(n, n) * hp.c_dtheta0,
            c_v: DMatrix::identity(m, m) * hp.c_v0,
            k: 1,
            a_k: hp.a0,
            safety_baseline: None,
        }
    }
}

/// One evaluation request sent to the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub id: JobId,
    pub theta: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Reduced output vector.
    pub y: Vec<f64>,
    pub completed: bool,
    /// Scalar the safety check compares (the controller-cost RMS for vehicles).
    pub safety_cost: f64,
}

/// Black-box oracle the tuner explores. `evaluate` must be a pure function of
/// the job: sigma, SPSA and safety jobs run on digital twins, `Target` jobs on
/// the system being tuned.
pub trait TuningEnvironment: Sync {
    fn output_dim(&self) -> usize;
    fn evaluate(&self, job: &EvalJob) -> Result<Evaluation, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub k: usize,
    pub mode: TunerMode,
    pub theta: Vec<f64>,
    pub candidate: Vec<f64>,
    pub gain: DMatrix<f64>,
    pub delta_ukf: Vec<f64>,
    pub delta_spsa: Vec<f64>,
    pub delta_fused: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub ghat: Vec<f64>,
    pub posterior: DMatrix<f64>,
    pub verdict: SafetyVerdict,
    pub c_k: f64,
    /// Step size used in this iteration.
    pub a_k: f64,
    /// Target-system output for the current theta.
    pub target_y: Vec<f64>,
    pub target_completed: bool,
    /// Outputs of the `2n + 1` sigma rollouts.
    pub sigma_y: Vec<Vec<f64>>,
    pub sigma_completed: Vec<bool>,
    pub trace_p: f64,
    pub trace_c_dtheta: f64,
    pub trace_c_v: f64,
}

impl UpdateReport {
    pub fn accepted(&self) -> bool {
        self.verdict.accepted
    }

    /// `0.5 |y|^2` of the target output.
    pub fn target_kpi(&self) -> f64 {
        0.5 * self.target_y.iter().map(|v| v * v).sum::<f64>()
    }
}

fn collect<E: TuningEnvironment>(
    env: &E,
    jobs: &[EvalJob],
    workers: usize,
) -> Result<Vec<Evaluation>, TunerError> {
    let m = env.output_dim();
    execute_batch(jobs, workers, |job| env.evaluate(job))
        .into_iter()
        .zip(jobs)
        .map(|(out, job)| match out {
            Ok(e) if e.y.len() == m => Ok(e),
            Ok(e) => Err(TunerError::Dimension {
                expected: m,
                actual: e.y.len(),
            }),
            Err(f) => Err(TunerError::JobFailed(job.id.to_string(), f.message)),
        })
        .collect()
}

fn job(campaign_seed: u64, k: usize, index: usize, kind: JobKind, theta: &DVector<f64>) -> EvalJob {
    let id = JobId { k, index, kind };
    EvalJob {
        id,
        theta: theta.iter().copied().collect(),
        seed: job_seed(campaign_seed, id),
    }
}

/// Seed of the fixed nominal-twin safety scenario (independent of `k`).
pub fn safety_seed(campaign_seed: u64) -> u64 {
    job_seed(
        campaign_seed,
        JobId {
            k: 0,
            index: 0,
            kind: JobKind::Safety,
        },
    )
}

/// One full tuner cycle. On any error the input belief is untouched.
pub fn tune_iteration<E: TuningEnvironment>(
    belief: &ParameterBelief,
    env: &E,
    hp: &TunerHyperparams,
    campaign_seed: u64,
    workers: usize,
) -> Result<(ParameterBelief, UpdateReport), TunerError> {
    hp.validate()?;
    let n = hp.n_theta();
    let m = env.output_dim();
    if belief.theta.len() != n {
        return Err(TunerError::Dimension {
            expected: n,
            actual: belief.theta.len(),
        });
    }
    if belief.c_v.nrows() != m {
        return Err(TunerError::Dimension {
            expected: m,
            actual: belief.c_v.nrows(),
        });
    }
    let k = belief.k;
    let w = hp.effective_w();
    let use_spsa = w < 1.0;
    let sigma = generate_sigma_points(belief, hp, derive_seed(campaign_seed, k as u64, 0, DELTA_STREAM))?;

    // Batch 1: sigma points, SPSA pair, target rollout (and the safety baseline once).
    let mut jobs: Vec<EvalJob> = (0..sigma.points.ncols())
        .map(|j| job(campaign_seed, k, j, JobKind::Sigma, &sigma.column(j)))
        .collect();
    if use_spsa {
        // Both probes share one seed so their loss difference sees common noise.
        let mut plus = job(campaign_seed, k, 0, JobKind::SpsaPlus, &sigma.spsa_plus);
        let mut minus = job(campaign_seed, k, 0, JobKind::SpsaMinus, &sigma.spsa_minus);
        let pair_seed = derive_seed(campaign_seed, k as u64, 0, JobKind::SpsaPlus.tag());
        plus.seed = pair_seed;
        minus.seed = pair_seed;
        jobs.push(plus);
        jobs.push(minus);
    }
    jobs.push(job(campaign_seed, k, 0, JobKind::Target, &belief.theta));
    let safety_seed = safety_seed(campaign_seed);
    if belief.safety_baseline.is_none() {
        let mut base = job(campaign_seed, k, 1, JobKind::Safety, &belief.theta);
        base.seed = safety_seed;
        jobs.push(base);
    }
    let results = collect(env, &jobs, workers)?;

    let n_sigma = sigma.points.ncols();
    let sigma_y: Vec<DVector<f64>> = results[..n_sigma].iter().map(|e| DVector::from_vec(e.y.clone())).collect();
    let mut cursor = n_sigma;
    let spsa_losses = if use_spsa {
        let l = |e: &Evaluation| e.y.iter().map(|v| v * v).sum::<f64>();
        let pair = (l(&results[cursor]), l(&results[cursor + 1]));
        cursor += 2;
        Some(pair)
    } else {
        None
    };
    let target = &results[cursor];
    cursor += 1;
    let baseline = match belief.safety_baseline {
        Some(b) => b,
        None => results[cursor].safety_cost,
    };
    let v_real = DVector::from_vec(target.y.clone());

    let moments = unscented_moments(&sigma, &sigma_y, belief)?;
    let kalman = kalman_step(&moments, &v_real)?;
    let (ghat, delta_spsa) = match spsa_losses {
        Some((lp, lm)) => spsa_step(lp, lm, &sigma.spsa_perturbation, belief.a_k)?,
        None => (DVector::zeros(n), DVector::zeros(n)),
    };
    let (delta_fused, candidate) = fuse_and_update(&belief.theta, &kalman.delta_ukf, &delta_spsa, w, hp);

    // Batch 2: the candidate on the nominal twin, same scenario as the baseline.
    let mut check = job(campaign_seed, k, 0, JobKind::Safety, &candidate);
    check.seed = safety_seed;
    let safety = collect(env, std::slice::from_ref(&check), workers)?.remove(0);
    let verdict = safety_verdict(&candidate, safety.completed, safety.safety_cost, baseline, hp);

    let epsilon = &v_real - &moments.y_bar;
    let (c_dtheta, c_v) = if hp.mode.adaptive() {
        adapt_covariances(&belief.c_dtheta, &belief.c_v, &delta_fused, &epsilon, &moments.c_yy, k, hp.alpha)
    } else {
        (belief.c_dtheta.clone(), belief.c_v.clone())
    };
    let y0_norm_sq = sigma_y[0].norm_squared();
    let next = ParameterBelief {
        theta: if verdict.accepted { candidate.clone() } else { belief.theta.clone() },
        p: kalman.posterior.clone(),
        c_dtheta,
        c_v,
        k: k + 1,
        a_k: schedule_step_size(hp.a0, y0_norm_sq, k),
        safety_baseline: Some(if verdict.accepted { safety.safety_cost } else { baseline }),
    };
    let report = UpdateReport {
        k,
        mode: hp.mode,
        theta: belief.theta.iter().copied().collect(),
        candidate: candidate.iter().copied().collect(),
        gain: kalman.gain,
        delta_ukf: kalman.delta_ukf.iter().copied().collect(),
        delta_spsa: delta_spsa.iter().copied().collect(),
        delta_fused: delta_fused.iter().copied().collect(),
        epsilon: epsilon.iter().copied().collect(),
        y_bar: moments.y_bar.iter().copied().collect(),
        ghat: ghat.iter().copied().collect(),
        posterior: kalman.posterior,
        verdict,
        c_k: sigma.c_k,
        a_k: belief.a_k,
        target_y: target.y.clone(),
        target_completed: target.completed,
        sigma_y: sigma_y.iter().map(|v| v.iter().copied().collect()).collect(),
        sigma_completed: results[..n_sigma].iter().map(|e| e.completed).collect(),
        trace_p: next.p.trace(),
        trace_c_dtheta: next.c_dtheta.trace(),
        trace_c_v: next.c_v.trace(),
    };
    Ok((next, report))
}

/// Runs `iterations` cycles from `theta0`.
pub fn run_tuning<E: TuningEnvironment>(
    env: &E,
    hp: &TunerHyperparams,
    theta0: &[f64],
    iterations: usize,
    campaign_seed: u64,
    workers: usize,
) -> Result<(ParameterBelief, Vec<UpdateReport>), TunerError> {
    hp.validate()?;
    let mut belief = ParameterBelief::with_output_dim(DVector::from_column_slice(theta0), env.output_dim(), hp);
    let mut reports = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (next, report) = tune_iteration(&belief, env, hp, campaign_seed, workers)?;
        belief = next;
        reports.push(report);
    }
    Ok((belief, reports))
}
