use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use twintune::controller::{solve_ocp, ControllerParams, OcpConfig, N_THETA};
use twintune::executor::{derive_seed, execute_batch, execute_sequential};
use twintune::oracle::{kpi, PerformanceRecord};
use twintune::path::bundled_paths;
use twintune::plant::{
    dynamic_derivative, fused_derivative, kinematic_derivative, step_fused, ControlRates, PlantParams, PlantState,
};
use twintune::tuner::{generate_sigma_points, ut_weights, ParameterBelief, TunerHyperparams};

fn state() -> impl Strategy<Value = [f64; 8]> {
    (
        0.0..6.0f64,
        -0.5..0.5f64,
        -0.5..0.5f64,
        0.0..50.0f64,
        -1.0..1.0f64,
        -0.4..0.4f64,
        -0.4..0.4f64,
        -1.0..1.0f64,
    )
        .prop_map(|(a, b, c, d, e, f, g, h)| [a, b, c, d, e, f, g, h])
}

fn mirror(x: &[f64; 8]) -> [f64; 8] {
    // vy, r, w, theta_dev, delta flip; vx, s, throttle do not
    [x[0], -x[1], -x[2], x[3], -x[4], -x[5], -x[6], x[7]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn blend_is_monotone_and_bounded(a in 0.0..4.0f64, b in 0.0..4.0f64) {
        let p = PlantParams::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!((0.0..=1.0).contains(&p.blend(lo)));
        prop_assert!(p.blend(lo) <= p.blend(hi));
    }

    #[test]
    fn fused_field_reduces_to_its_parts_outside_the_blend(x in state(), u0 in -0.6..0.6f64, u1 in -1.5..1.5f64, kappa in -0.1..0.1f64) {
        let p = PlantParams::default();
        let u = [u0, u1];
        let mut slow = x;
        slow[0] = x[0] * p.blend_lo / 6.0;
        prop_assert_eq!(fused_derivative(&slow, &u, &p, kappa).unwrap(), kinematic_derivative(&slow, &u, &p, kappa).unwrap());
        let mut fast = x;
        fast[0] = p.blend_hi + x[0];
        prop_assert_eq!(fused_derivative(&fast, &u, &p, kappa).unwrap(), dynamic_derivative(&fast, &u, &p, kappa).unwrap());
    }

    #[test]
    fn dynamic_model_is_mirror_symmetric(x in state(), u0 in -0.6..0.6f64, u1 in -1.5..1.5f64, kappa in -0.1..0.1f64) {
        let p = PlantParams::default();
        let mut x = x;
        x[0] += 1.0;
        let f = dynamic_derivative(&x, &[u0, u1], &p, kappa).unwrap();
        let g = dynamic_derivative(&mirror(&x), &[-u0, u1], &p, -kappa).unwrap();
        let fm = mirror(&f);
        for i in 0..8 {
            prop_assert!((fm[i] - g[i]).abs() <= 1e-9 * (1.0 + f[i].abs()), "component {i}: {} vs {}", fm[i], g[i]);
        }
    }

    #[test]
    fn steps_respect_physical_limits(x in state(), u0 in -5.0..5.0f64, u1 in -5.0..5.0f64, dt in 0.01..0.2f64) {
        let p = PlantParams::default();
        let s = PlantState::from_array(x);
        let next = step_fused(&s, &ControlRates::new(u0, u1), &p, 0.02, dt).unwrap();
        prop_assert!(next.is_finite());
        prop_assert!(next.vx >= 0.0);
        prop_assert!(next.delta.abs() <= p.max_steer);
        prop_assert!(next.throttle.abs() <= 1.0);
    }

    #[test]
    fn kpi_is_half_the_sum_of_squared_rms(ys in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 1..200)) {
        let rec = PerformanceRecord {
            y_path: ys.iter().map(|t| t.0).collect(),
            y_velocity: ys.iter().map(|t| t.1).collect(),
            y_cost: ys.iter().map(|t| t.2).collect(),
            completed: true,
            recorded: ys.len(),
            solver_failures: 0,
        };
        let h = rec.rms().to_array();
        let from_rms = 0.5 * h.iter().map(|v| v * v).sum::<f64>();
        prop_assert!((kpi(&rec.stack()) - from_rms).abs() <= 1e-9 * (1.0 + from_rms));
    }

    #[test]
    fn sigma_points_stay_in_the_box(
        theta in prop::collection::vec(0.06..49.0f64, 9),
        diag in prop::collection::vec(0.01..30.0f64, 9),
        seed in any::<u64>(),
    ) {
        let hp = TunerHyperparams::default();
        let mut b = ParameterBelief::initial(DVector::from_vec(theta), &hp);
        b.p = DMatrix::from_diagonal(&DVector::from_vec(diag));
        let s = generate_sigma_points(&b, &hp, seed).unwrap();
        let (w0, wj) = ut_weights(9, hp.lambda_ut);
        prop_assert!((w0 + 18.0 * wj - 1.0).abs() < 1e-12);
        for j in 0..s.points.ncols() {
            for i in 0..9 {
                let v = s.points[(i, j)];
                prop_assert!(v >= hp.theta_min[i] - 1e-12 && v <= hp.theta_max[i] + 1e-12);
            }
        }
        for i in 0..9 {
            prop_assert!(s.spsa_plus[i] >= hp.theta_min[i] - 1e-12 && s.spsa_plus[i] <= hp.theta_max[i] + 1e-12);
            prop_assert!(s.spsa_minus[i] >= hp.theta_min[i] - 1e-12 && s.spsa_minus[i] <= hp.theta_max[i] + 1e-12);
        }
    }

    #[test]
    fn batch_results_do_not_depend_on_workers(seeds in prop::collection::vec(any::<u64>(), 0..40), workers in 1usize..9) {
        let f = |s: &u64| if s % 7 == 0 { Err(format!("bad {s}")) } else { Ok(derive_seed(*s, 1, 2, 3)) };
        let a: Vec<_> = execute_sequential(&seeds, f).into_iter().map(|r| r.map_err(|e| (e.index, e.message))).collect();
        let b: Vec<_> = execute_batch(&seeds, workers, f).into_iter().map(|r| r.map_err(|e| (e.index, e.message))).collect();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn controller_inputs_respect_the_box(
        theta in prop::collection::vec(0.05..50.0f64, N_THETA),
        vx in 0.2..5.0f64,
        w in -0.8..0.8f64,
        dev in -0.3..0.3f64,
    ) {
        let path = bundled_paths().remove(0);
        let cfg = OcpConfig::default();
        let x0 = PlantState { vx, w, theta_dev: dev, ..PlantState::default() };
        let params = ControllerParams::from_slice(&theta).unwrap();
        let res = solve_ocp(&x0, &path, &params, &cfg, &PlantParams::default(), None).unwrap();
        for u in &res.inputs {
            for i in 0..2 {
                prop_assert!(u[i] >= cfg.input_lower[i] && u[i] <= cfg.input_upper[i]);
            }
        }
        prop_assert!(res.cost >= 0.0);
    }

    #[test]
    fn optimal_cost_scales_with_the_weights(theta in prop::collection::vec(0.1..10.0f64, N_THETA), c in 0.2..5.0f64) {
        let path = bundled_paths().remove(0);
        let cfg = OcpConfig::default();
        let x0 = PlantState { vx: 2.0, w: 0.3, ..PlantState::default() };
        let model = PlantParams::default();
        let base = ControllerParams::from_slice(&theta).unwrap();
        let j1 = solve_ocp(&x0, &path, &base, &cfg, &model, None).unwrap().cost;
        let jc = solve_ocp(&x0, &path, &base.scaled(c), &cfg, &model, None).unwrap().cost;
        prop_assert!((jc - c * j1).abs() <= 1e-6 * (1.0 + c * j1), "{jc} vs {}", c * j1);
    }
}
