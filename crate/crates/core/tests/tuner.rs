mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use twintune::error::TunerError;
use twintune::executor::JobKind;
use twintune::synthetic::AffineOracle;
use twintune::tuner::{
    adapt_covariances, generate_sigma_points, kalman_step, run_tuning, schedule_step_size, spsa_step,
    tune_iteration, unscented_moments, ut_weights, EvalJob, Evaluation, ParameterBelief,
    TunerHyperparams, TunerMode, TuningEnvironment,
};

fn belief_with(theta: DVector<f64>, p: DMatrix<f64>, c_dtheta: DMatrix<f64>, c_v: DMatrix<f64>) -> ParameterBelief {
    ParameterBelief {
        theta,
        p,
        c_dtheta,
        c_v,
        k: 1,
        a_k: 1.0,
        safety_baseline: None,
    }
}

#[test]
fn ut_weights_sum_to_one() {
    for n in [1, 2, 5, 9, 20] {
        for lambda in [-0.5, 0.0, 1.0, 3.0 - n as f64] {
            if n as f64 + lambda <= 0.0 {
                continue;
            }
            let (w0, wj) = ut_weights(n, lambda);
            assert!((w0 + 2.0 * n as f64 * wj - 1.0).abs() < 1e-15, "n={n} lambda={lambda}");
        }
    }
}

#[test]
fn weighted_sigma_mean_is_the_mean() {
    let mut r = rng(1);
    for trial in 0..20 {
        let hp = wide_hp(9);
        let theta = DVector::from_fn(9, |_, _| r.random_range(15.0..25.0));
        let belief = belief_with(theta.clone(), random_spd(&mut r, 9, 0.1), DMatrix::identity(9, 9), DMatrix::identity(3, 3));
        let s = generate_sigma_points(&belief, &hp, trial).unwrap();
        let mean = &s.points * &s.weights;
        assert!((mean - &theta).amax() < 1e-12);
    }
}

#[test]
fn affine_map_moments_are_exact() {
    let mut r = rng(2);
    for trial in 0..10 {
        let n = 9;
        let hp = wide_hp(n);
        let m = uniform_matrix(&mut r, 3, n, -2.0, 2.0);
        let b = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
        let theta = DVector::from_fn(n, |_, _| r.random_range(20.0..23.0));
        let p = random_spd(&mut r, n, 0.05);
        let belief = belief_with(theta.clone(), p.clone(), DMatrix::zeros(n, n), DMatrix::identity(3, 3));
        let s = generate_sigma_points(&belief, &hp, trial).unwrap();
        let y: Vec<DVector<f64>> = (0..s.points.ncols()).map(|j| &m * s.column(j) + &b).collect();
        let mo = unscented_moments(&s, &y, &belief).unwrap();
        let y_bar = &m * &theta + &b;
        assert!((&mo.y_bar - &y_bar).amax() < 1e-8 * y_bar.amax().max(1.0));
        // with zero process noise the predicted covariance is P itself
        assert!(rel_err(&mo.p_pred, &p) < 1e-8);
        assert!(rel_err(&mo.p_theta_y, &(&p * m.transpose())) < 1e-8);
        assert!(rel_err(&mo.p_theta_y, &(&mo.p_pred * m.transpose())) < 1e-8);
        assert!(rel_err(&mo.c_yy, &(&m * &p * m.transpose())) < 1e-8);
    }
}

#[test]
fn process_noise_enters_the_prediction_not_the_cross_covariance() {
    let mut r = rng(3);
    let hp = wide_hp(4);
    let m = uniform_matrix(&mut r, 3, 4, -1.0, 1.0);
    let p = random_spd(&mut r, 4, 0.1);
    let q = random_spd(&mut r, 4, 0.1);
    let belief = belief_with(DVector::from_element(4, 20.0), p.clone(), q.clone(), DMatrix::identity(3, 3));
    let s = generate_sigma_points(&belief, &hp, 0).unwrap();
    let y: Vec<DVector<f64>> = (0..s.points.ncols()).map(|j| &m * s.column(j)).collect();
    let mo = unscented_moments(&s, &y, &belief).unwrap();
    assert!(rel_err(&mo.p_pred, &(&p + &q)) < 1e-10);
    assert!(rel_err(&mo.p_theta_y, &(&p * m.transpose())) < 1e-10);
}

#[test]
fn constant_outputs_have_zero_spread() {
    let hp = wide_hp(9);
    let belief = ParameterBelief::initial(DVector::from_element(9, 1.0), &hp);
    let s = generate_sigma_points(&belief, &hp, 0).unwrap();
    let c = DVector::from_vec(vec![0.3, 0.2, 0.1]);
    let y = vec![c.clone(); 19];
    let mo = unscented_moments(&s, &y, &belief).unwrap();
    assert!((mo.y_bar - c).amax() < 1e-15);
    assert!(mo.c_yy.amax() < 1e-15 && mo.p_theta_y.amax() < 1e-15);
}

/// Information-form update `(P^-1 + M^T R^-1 M)^-1` with the process noise
/// added afterwards; algebraically independent of the gain form.
fn information_update(
    theta: &DVector<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    m: &DMatrix<f64>,
    c_v: &DMatrix<f64>,
    v: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let rinv = c_v.clone().try_inverse().unwrap();
    let info = p.clone().try_inverse().unwrap() + m.transpose() * &rinv * m;
    let post = info.try_inverse().unwrap();
    let theta_next = theta - &post * m.transpose() * &rinv * v;
    (theta_next, post + q)
}

fn check_linear_gaussian(seed: u64, n: usize) {
    let mut r = rng(seed);
    let mut hp = wide_hp(n);
    hp.mode = TunerMode::UkfOnly;
    let oracle = AffineOracle::new(uniform_matrix(&mut r, 3, n, -1.0, 1.0), DVector::from_element(n, 22.0));
    let p = random_spd(&mut r, n, 0.2);
    let q = random_spd(&mut r, n, 0.05) * 0.1;
    let c_v = random_spd(&mut r, 3, 0.5);
    let theta = DVector::from_fn(n, |_, _| r.random_range(20.0..24.0));
    let belief = belief_with(theta.clone(), p.clone(), q.clone(), c_v.clone());

    let (next, report) = tune_iteration(&belief, &oracle, &hp, seed, 1).unwrap();
    let v = oracle.mean_output(&theta);
    let (theta_ref, p_ref) = information_update(&theta, &p, &q, &oracle.m, &c_v, &v);
    let cand = DVector::from_vec(report.candidate.clone());
    assert!((&cand - &theta_ref).norm() / theta_ref.norm() < 1e-6, "theta {cand} vs {theta_ref}");
    assert!(rel_err(&next.p, &p_ref) < 1e-6, "P rel err {}", rel_err(&next.p, &p_ref));
}

#[test]
fn linear_gaussian_two_parameters_match_closed_form() {
    check_linear_gaussian(10, 2);
}

#[test]
fn linear_gaussian_nine_parameters_match_closed_form() {
    for seed in 11..14 {
        check_linear_gaussian(seed, 9);
    }
}

#[test]
fn scalar_gain_example() {
    // P_thetay = 2, P_yy = 4, V = 1
    let hp = wide_hp(1);
    let belief = belief_with(DVector::from_element(1, 20.0), DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 0.0));
    let s = generate_sigma_points(&belief, &hp, 0).unwrap();
    // y = 2 theta gives P_thetay = 2 P = 2 and C_yy = 4
    let y: Vec<DVector<f64>> = (0..3).map(|j| s.column(j) * 2.0).collect();
    let mo = unscented_moments(&s, &y, &belief).unwrap();
    let ks = kalman_step(&mo, &DVector::from_element(1, 1.0)).unwrap();
    assert!((ks.gain[(0, 0)] - 0.5).abs() < 1e-12);
    assert!((ks.delta_ukf[0] + 0.5).abs() < 1e-12);
}

#[test]
fn posterior_never_exceeds_prediction() {
    let mut r = rng(4);
    for trial in 0..20 {
        let hp = wide_hp(9);
        let m = uniform_matrix(&mut r, 3, 9, -1.0, 1.0);
        let belief = belief_with(
            DVector::from_element(9, 20.0),
            random_spd(&mut r, 9, 0.1),
            random_spd(&mut r, 9, 0.1),
            random_spd(&mut r, 3, 0.1),
        );
        let s = generate_sigma_points(&belief, &hp, trial).unwrap();
        let y: Vec<DVector<f64>> = (0..19).map(|j| &m * s.column(j)).collect();
        let mo = unscented_moments(&s, &y, &belief).unwrap();
        let ks = kalman_step(&mo, &DVector::from_element(3, 1.0)).unwrap();
        assert!(ks.posterior.trace() <= mo.p_pred.trace() + 1e-12);
    }
}

fn quadratic(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    (random_spd(r, n, 0.5), DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0)))
}

#[test]
fn spsa_is_exact_along_the_probe() {
    let mut r = rng(5);
    for _ in 0..50 {
        let (a, b) = quadratic(&mut r, 9);
        let l = |t: &DVector<f64>| t.dot(&(&a * t)) + b.dot(t);
        let theta = DVector::from_fn(9, |_, _| r.random_range(-2.0..2.0));
        let grad = (&a + a.transpose()) * &theta + &b;
        let p = DVector::from_fn(9, |_, _| if r.random::<bool>() { 0.3 } else { -0.3 });
        let (ghat, step) = spsa_step(l(&(&theta + &p)), l(&(&theta - &p)), &p, 2.0).unwrap();
        let directional = grad.dot(&p);
        for i in 0..9 {
            assert!((ghat[i] * p[i] - directional).abs() < 1e-10 * directional.abs().max(1.0));
        }
        assert_eq!(step, ghat * -2.0);
    }
}

#[test]
fn step_size_decreases_strictly_for_fixed_output() {
    for y0 in [0.0, 0.5, 3.0] {
        let a: Vec<f64> = (1..200).map(|k| schedule_step_size(1.0, y0, k)).collect();
        assert!(a.windows(2).all(|w| w[1] < w[0]));
        assert!(*a.last().unwrap() < 0.05);
    }
    assert_eq!(schedule_step_size(1.0, 3.0, 1), 0.25);
}

#[test]
fn covariance_recursion_matches_brute_force() {
    let mut r = rng(6);
    let alpha = 0.8;
    let mut cd = DMatrix::identity(4, 4);
    let mut cv = DMatrix::identity(2, 2);
    let mut ref_cd = 4.0;
    let mut ref_cv = 2.0;
    for k in 1..=15 {
        let dt = DVector::from_fn(4, |_, _| r.random_range(-1.0..1.0));
        let eps = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
        let cyy = random_spd(&mut r, 2, 0.0);
        (cd, cv) = adapt_covariances(&cd, &cv, &dt, &eps, &cyy, k, alpha);
        let kk = (k * k) as f64;
        ref_cd = alpha * ref_cd + (1.0 - alpha) * dt.norm_squared() / kk;
        ref_cv = alpha * ref_cv + (1.0 - alpha) * (cyy.trace() + eps.norm_squared()) / kk;
        assert!((cd.trace() - ref_cd).abs() < 1e-12 * ref_cd.max(1.0));
        assert!((cv.trace() - ref_cv).abs() < 1e-12 * ref_cv.max(1.0));
    }
}

#[test]
fn optimum_is_a_fixed_point_without_noise() {
    let oracle = affine_problem(7, 9, 0.0);
    let hp = TunerHyperparams {
        theta_min: vec![0.05; 9],
        theta_max: vec![50.0; 9],
        ..TunerHyperparams::default()
    };
    let theta0: Vec<f64> = oracle.theta_star.iter().copied().collect();
    let (belief, reports) = run_tuning(&oracle, &hp, &theta0, 6, 3, 1).unwrap();
    for r in &reports {
        let step = DVector::from_vec(r.delta_fused.clone());
        assert!(step.norm() <= 1e-9, "k={} step {}", r.k, step.norm());
    }
    assert!((belief.theta - &oracle.theta_star).norm() <= 1e-9);
}

// Gains and initial covariances sized for outputs of order one and 1% noise.
fn affine_hp() -> TunerHyperparams {
    TunerHyperparams {
        theta_min: vec![0.05; 9],
        theta_max: vec![50.0; 9],
        a0: 0.01,
        c_dtheta0: 0.01,
        c_v0: 0.01,
        ..TunerHyperparams::default()
    }
}

#[test]
fn affine_oracle_converges_within_fifteen_iterations() {
    let mut ratios = Vec::new();
    for seed in 0..20 {
        let oracle = affine_problem(100 + seed, 9, 0.01);
        let theta0 = vec![1.0; 9];
        let d0 = (DVector::from_vec(theta0.clone()) - &oracle.theta_star).norm();
        let (belief, _) = run_tuning(&oracle, &affine_hp(), &theta0, 15, seed, 1).unwrap();
        ratios.push((belief.theta - &oracle.theta_star).norm() / d0);
    }
    let med = median(ratios.clone());
    assert!(med < 0.05, "median distance ratio {med}, all {ratios:?}");
}

#[test]
fn exploration_shrinks_on_a_noisy_quadratic() {
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let oracle = affine_problem(200 + seed, 9, 0.01);
        let hp = affine_hp();
        let theta0 = vec![1.0; 9];
        let p0 = ParameterBelief::with_output_dim(DVector::from_vec(theta0.clone()), 9, &hp).p.trace();
        let (belief, _) = run_tuning(&oracle, &hp, &theta0, 15, seed, 1).unwrap();
        ratios.push(belief.p.trace() / p0);
    }
    let med = median(ratios.clone());
    assert!(med < 0.2, "median trace ratio {med}, all {ratios:?}");
}

#[test]
fn ukf_only_reproduces_constant_covariance_at_unit_weight() {
    let oracle = affine_problem(8, 9, 0.05);
    let base = TunerHyperparams {
        fusion_w: 1.0,
        ..affine_hp()
    };
    let ukf = TunerHyperparams {
        mode: TunerMode::UkfOnly,
        ..base.clone()
    };
    let cc = TunerHyperparams {
        mode: TunerMode::ConstantCovariance,
        ..base
    };
    let theta0 = vec![1.0; 9];
    let (b1, r1) = run_tuning(&oracle, &ukf, &theta0, 5, 9, 1).unwrap();
    let (b2, r2) = run_tuning(&oracle, &cc, &theta0, 5, 9, 1).unwrap();
    assert_eq!(b1, b2);
    for (a, b) in r1.iter().zip(&r2) {
        assert_eq!((&a.theta, &a.candidate, &a.posterior), (&b.theta, &b.candidate, &b.posterior));
    }
}

#[test]
fn auks_and_ukf_only_share_the_first_step() {
    let oracle = affine_problem(9, 9, 0.05);
    let auks = TunerHyperparams {
        fusion_w: 1.0,
        ..affine_hp()
    };
    let ukf = TunerHyperparams {
        mode: TunerMode::UkfOnly,
        ..auks.clone()
    };
    let belief = ParameterBelief::with_output_dim(DVector::from_element(9, 1.0), 9, &auks);
    let (_, a) = tune_iteration(&belief, &oracle, &auks, 4, 1).unwrap();
    let (_, u) = tune_iteration(&belief, &oracle, &ukf, 4, 1).unwrap();
    assert_eq!(a.candidate, u.candidate);
    assert_eq!(a.posterior, u.posterior);
    assert_ne!(a.trace_c_dtheta, u.trace_c_dtheta);
}

#[test]
fn worker_count_does_not_change_an_iteration() {
    let oracle = affine_problem(12, 9, 0.05);
    let hp = affine_hp();
    let belief = ParameterBelief::with_output_dim(DVector::from_element(9, 1.0), 9, &hp);
    let one = tune_iteration(&belief, &oracle, &hp, 5, 1).unwrap();
    for w in [2, 4, 8] {
        assert_eq!(tune_iteration(&belief, &oracle, &hp, 5, w).unwrap(), one);
    }
}

/// Fails every job of one kind.
struct Flaky<'a> {
    inner: &'a AffineOracle,
    fail: JobKind,
}

impl TuningEnvironment for Flaky<'_> {
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn evaluate(&self, job: &EvalJob) -> Result<Evaluation, String> {
        if job.id.kind == self.fail {
            if job.id.index == 3 {
                panic!("twin crashed");
            }
            return Err("solver exploded".into());
        }
        self.inner.evaluate(job)
    }
}

#[test]
fn job_failures_abort_the_iteration_cleanly() {
    let oracle = affine_problem(13, 9, 0.0);
    let hp = affine_hp();
    let belief = ParameterBelief::with_output_dim(DVector::from_element(9, 1.0), 9, &hp);
    for kind in [JobKind::Sigma, JobKind::Target, JobKind::Safety] {
        let env = Flaky { inner: &oracle, fail: kind };
        let err = tune_iteration(&belief, &env, &hp, 0, 2).unwrap_err();
        assert!(matches!(err, TunerError::JobFailed(..)), "{err}");
    }
}

#[test]
fn rejected_updates_keep_theta_but_advance_the_schedule() {
    // Safety cost rises with every move away from theta0, so any nonzero
    // candidate is rejected once the margin is zero.
    struct Pinned(AffineOracle);
    impl TuningEnvironment for Pinned {
        fn output_dim(&self) -> usize {
            self.0.output_dim()
        }
        fn evaluate(&self, job: &EvalJob) -> Result<Evaluation, String> {
            let mut e = self.0.evaluate(job)?;
            e.safety_cost = 1.0 + job.theta.iter().map(|t| (t - 1.0).abs()).sum::<f64>();
            Ok(e)
        }
    }
    let env = Pinned(affine_problem(14, 9, 0.0));
    let hp = TunerHyperparams {
        safety_margin: 0.0,
        ..affine_hp()
    };
    let theta0 = vec![1.0; 9];
    let (belief, reports) = run_tuning(&env, &hp, &theta0, 3, 1, 1).unwrap();
    assert!(reports.iter().all(|r| !r.accepted()));
    assert_eq!(belief.theta, DVector::from_vec(theta0));
    assert_eq!(belief.k, 4);
    assert!(reports[2].a_k < reports[0].a_k);
}
