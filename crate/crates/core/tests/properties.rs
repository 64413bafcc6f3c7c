use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use fusionest::linear::{self, LocalSystem};
use fusionest::lmi;
use fusionest::models::{
    self, NoiseKind, NoiseSource, NonlinearModel, RobotModel, SamplingSchedule, StandardNoise, TrackingModel,
};
use fusionest::nonlinear;

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-range..range, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn pd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (matrix(n, n, 1.5), 0.01f64..3.0).prop_map(move |(r, s)| &r * r.transpose() + DMatrix::identity(n, n) * s)
}

fn local_instance() -> impl Strategy<Value = (LocalSystem, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (1usize..=3, 1usize..=3, 1usize..=2, 1usize..=2).prop_flat_map(|(n, q, n_w, n_v)| {
        (
            matrix(n, n, 1.2),
            matrix(n, n_w, 1.0),
            matrix(q, n, 1.0),
            matrix(q, n_v, 1.0),
            matrix(n, q, 1.0),
            pd(n),
            pd(n_w + n_v),
        )
            .prop_map(|(a, b, c, b_sensor, k, p, theta)| (LocalSystem { a, b, c, b_sensor }, k, p, theta))
    })
}

fn robot_state() -> impl Strategy<Value = DVector<f64>> {
    (-2.0f64..14.0, -2.0f64..14.0, -3.2f64..3.2).prop_map(|(x, y, th)| DVector::from_vec(vec![x, y, th]))
}

fn far_from_landmarks(robot: &RobotModel, x: &DVector<f64>) -> bool {
    robot
        .landmarks
        .iter()
        .all(|l| (l[0] - x[0]).hypot(l[1] - x[1]) > 0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn schur_expansion_preserves_definiteness((sys, k, p, theta) in local_instance()) {
        let bordered = linear::local_bordered(&sys, &k, &p, &theta);
        let condensed = lmi::schur_expand(&bordered, sys.state_dim()).unwrap();
        let margin = lmi::max_eigenvalue(&bordered).abs().min(lmi::max_eigenvalue(&condensed).abs());
        prop_assume!(margin > 1e-9);
        prop_assert_eq!(
            lmi::check_negative_definite(&bordered, 0.0).unwrap(),
            lmi::check_negative_definite(&condensed, 0.0).unwrap()
        );
    }

    #[test]
    fn bordered_matrices_are_symmetric((sys, k, p, theta) in local_instance()) {
        let bordered = linear::local_bordered(&sys, &k, &p, &theta);
        prop_assert!(lmi::relative_asymmetry(&bordered) <= lmi::SYMMETRY_TOL);
    }

    #[test]
    fn local_error_recursion_matches_simulation(
        (sys, k, _p, _theta) in local_instance(),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let n = sys.state_dim();
        let (x_prev, x_hat_prev) = (draw(n), draw(n));
        let (w, v) = (draw(sys.b.ncols()), draw(sys.b_sensor.ncols()));
        let x = &sys.a * &x_prev + &sys.b * &w;
        let y = &sys.c * &x + &sys.b_sensor * &v;
        let x_hat = linear::lse_predict_correct(&sys.a, &sys.c, &x_hat_prev, &y, &k);
        let xi = DVector::from_iterator(w.len() + v.len(), w.iter().chain(v.iter()).copied());
        let oracle = linear::error_recursion_oracle(&(&x_prev - &x_hat_prev), &sys, &k, &xi);
        prop_assert!((&x - &x_hat - oracle).amax() <= 1e-12);
    }

    #[test]
    fn bounded_noises_stay_in_range(t in 0usize..5000, run in 0u64..1000, seed in any::<u64>()) {
        let tracking = StandardNoise::tracking(NoiseKind::TypeIII, seed, 2);
        let s = tracking.sample(t, run);
        prop_assert!(s.w.iter().all(|&w| (-1.5..=0.5).contains(&w)));
        prop_assert!(s.v.iter().flat_map(|v| v.iter()).all(|&v| (-1.0..=0.4).contains(&v)));

        let robot = StandardNoise::robot(NoiseKind::TypeIV, seed);
        let s = robot.sample(t, run);
        let wb = robot.process_bounds().unwrap();
        prop_assert!(s.w.iter().zip(&wb).all(|(&w, &(lo, hi))| lo <= w && w <= hi));
        prop_assert!((-0.1..=0.1).contains(&s.w[0]));
        let vb = robot.measurement_bounds().unwrap();
        for (v, b) in s.v.iter().zip(&vb) {
            prop_assert!(v.iter().zip(b).all(|(&x, &(lo, hi))| lo <= x && x <= hi));
        }
    }

    #[test]
    fn equal_seeds_give_equal_streams(t in 0usize..1000, run in 0u64..100, seed in any::<u64>()) {
        for kind in [NoiseKind::TypeII] {
            let a = StandardNoise::tracking(kind, seed, 2);
            let b = StandardNoise::tracking(kind, seed, 2);
            prop_assert_eq!(a.sample(t, run), b.sample(t, run));
        }
        let a = StandardNoise::robot(NoiseKind::TypeIV, seed);
        let b = StandardNoise::robot(NoiseKind::TypeIV, seed);
        prop_assert_eq!(a.sample(t, run), b.sample(t, run));
    }

    #[test]
    fn robot_jacobians_match_finite_differences(x in robot_state()) {
        let robot = RobotModel::default();
        prop_assume!(far_from_landmarks(&robot, &x));
        let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / b.amax().max(1.0);
        let fd = models::finite_difference_jacobian(|z| robot.f(z), &x).unwrap();
        prop_assert!(rel(&fd, &robot.f_jacobian(&x).unwrap()) < 1e-5);
        for i in 0..robot.sensor_count() {
            let fd = models::finite_difference_jacobian(|z| robot.g(i, z), &x).unwrap();
            let analytic = robot.g_jacobian(i, &x).unwrap();
            // bearings wrap at ±π; skip states straddling the branch cut
            prop_assume!((&fd - &analytic).amax() < 1e3);
            prop_assert!(rel(&fd, &analytic) < 1e-5);
        }
    }

    #[test]
    fn taylor_form_matches_simulation(
        x_prev in robot_state(),
        offset in (-0.3f64..0.3, -0.3f64..0.3, -0.2f64..0.2),
        t in 1usize..200,
        run in 0u64..50,
    ) {
        let robot = RobotModel::default();
        let x_hat_prev = &x_prev + DVector::from_vec(vec![offset.0, offset.1, offset.2]);
        prop_assume!(far_from_landmarks(&robot, &x_prev) && far_from_landmarks(&robot, &robot.f(&x_hat_prev)));
        let noise = StandardNoise::robot(NoiseKind::TypeIV, 5);
        let w = robot.process_noise(&x_prev, &noise.sample(t - 1, run).w);
        let x = models::step_truth(&robot, &x_prev, t - 1, &w).unwrap();
        prop_assume!(far_from_landmarks(&robot, &x));
        let v = noise.sample(t, run).v;
        for i in 0..robot.sensor_count() {
            let sys = nonlinear::linearized_system(&robot, &x_hat_prev, i, t).unwrap();
            let k = DMatrix::from_fn(3, sys.c_j.nrows(), |r, c| 0.1 * (r as f64 + 1.0) - 0.05 * c as f64);
            let y = models::measure(&robot, &x, t, i, &v[i]).unwrap();
            let mut est = nonlinear::NonlinearLocalEstimator::new(i, x_hat_prev.clone());
            nonlinear::nlse_update(&mut est, &robot, &y, &k).unwrap();
            let simulated = &x - &est.estimate;
            let form = nonlinear::taylor_error_form(&robot, i, t, &x_prev, &x_hat_prev, &x, &sys, &k, &w, &v[i]);
            prop_assert!((simulated - form).amax() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn replay_reproduces_states(seed in any::<u64>(), run in 0u64..20) {
        let model = TrackingModel::new(SamplingSchedule::varying());
        let noise = StandardNoise::tracking(NoiseKind::TypeII, seed, 2);
        let x0 = DVector::from_vec(vec![0.3, -0.2]);
        let rec = models::simulate_linear(&model, &noise, &x0, 40, run).unwrap();
        for t in 1..=40 {
            let x = models::step_truth_linear(&model, &rec.states[t - 1], t - 1, &rec.process_noise[t - 1]).unwrap();
            prop_assert_eq!(&x, &rec.states[t]);
        }

        let robot = RobotModel::default();
        let noise = StandardNoise::robot(NoiseKind::TypeIV, seed);
        let rec = models::simulate_nonlinear(&robot, &noise, &DVector::zeros(3), 40, run).unwrap();
        for t in 1..=40 {
            let x = models::step_truth(&robot, &rec.states[t - 1], t - 1, &rec.process_noise[t - 1]).unwrap();
            prop_assert_eq!(&x, &rec.states[t]);
            for i in 0..2 {
                let y = models::measure(&robot, &x, t, i, &rec.measurement_noise[t - 1][i]).unwrap();
                prop_assert_eq!(&y, &rec.measurements[t - 1][i]);
            }
        }
    }

    #[test]
    fn certified_local_designs_contract((sys, _k, _p, _theta) in local_instance()) {
        let r = linear::design_local_gain(&sys).unwrap();
        prop_assume!(r.certified);
        prop_assert!(sys.contraction(&r.k) < 1.0);
        let condensed = lmi::schur_expand(&r.bordered(&sys), sys.state_dim()).unwrap();
        prop_assert!(lmi::max_eigenvalue(&condensed) < 0.0);
    }
}
