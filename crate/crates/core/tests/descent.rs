use mlopt::descent::{
    agd_step, asgd_step, check_sharpness, gd_step, run_multilevel_descent, sgd_step, sharpness_lower_bound,
    AgdState, Algorithm, BatchMeanOracle, DescentOracle, DescentState, GaussianNoiseOracle, GdState,
    GradientOracle, QuadraticOracle, ShiftedQuadraticOracle, SmoothConvexSpec, ZeroNoise,
};
use mlopt::rng::stream;
use mlopt::schedule::{multilevel_schedule, single_level_schedule, ConvergenceModel, LevelSchedule, ScheduleKind};
use mlopt::Result;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn half_square() -> QuadraticOracle<f64> {
    QuadraticOracle {
        a: DMatrix::identity(1, 1),
        minimizer: scalar(0.0),
    }
}

#[test]
fn gd_step_on_half_square() {
    let spec = SmoothConvexSpec::new(1.0, 1.0).unwrap().with_eta(0.5).unwrap();
    let next = gd_step(&GdState::new(scalar(1.0)), &half_square(), 1.0, &spec).unwrap();
    assert_eq!(next.x[0], 0.5);
    assert!(next.x[0] <= spec.gd_rate());
    assert_eq!(next.cost, 1.0);
    assert_eq!(next.iteration, 1);
}

#[test]
fn gd_step_on_shifted_oracle() {
    let spec = SmoothConvexSpec::new(1.0, 1.0).unwrap().with_eta(0.5).unwrap();
    let oracle = ShiftedQuadraticOracle { dim: 1, alpha: 1.0 };
    let next = gd_step(&GdState::new(scalar(1.0)), &oracle, 10.0, &spec).unwrap();
    assert!((next.x[0] - 0.55).abs() < 1e-15);
    assert_eq!(next.cost, 10.0);
}

#[test]
fn minimizer_is_a_fixed_point() {
    let spec = SmoothConvexSpec::new(0.25, 1.0).unwrap();
    let oracle = QuadraticOracle {
        a: DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 1.0])),
        minimizer: DVector::from_vec(vec![1.0, -2.0]),
    };
    let gd = gd_step(&GdState::new(oracle.minimizer.clone()), &oracle, 3.0, &spec).unwrap();
    assert_eq!(gd.x, oracle.minimizer);
    let agd = agd_step(&AgdState::new(oracle.minimizer.clone()), &oracle, 3.0, &spec).unwrap();
    assert_eq!(agd.y, oracle.minimizer);
    assert_eq!(agd.z, oracle.minimizer);
    let mut rng = stream(1, 0);
    let noiseless = ZeroNoise(oracle.clone());
    let asgd = asgd_step(&AgdState::new(oracle.minimizer.clone()), &noiseless, 3.0, &spec, &mut rng).unwrap();
    assert_eq!(asgd.y, oracle.minimizer);
}

#[test]
fn zero_noise_stochastic_steps_match_deterministic_ones() {
    let spec = SmoothConvexSpec::new(0.25, 1.0).unwrap();
    let oracle = ShiftedQuadraticOracle { dim: 2, alpha: 1.0 };
    let noiseless = ZeroNoise(oracle);
    for seed in [0u64, 1, 99] {
        let mut rng = stream(seed, 3);
        let mut gd = GdState::new(DVector::from_vec(vec![1.0, -1.0]));
        let mut sgd = gd.clone();
        let mut agd = AgdState::new(DVector::from_vec(vec![1.0, -1.0]));
        let mut asgd = agd.clone();
        for k in 1..20 {
            let l = k as f64;
            gd = gd_step(&gd, &oracle, l, &spec).unwrap();
            sgd = sgd_step(&sgd, &noiseless, l, &spec, &mut rng).unwrap();
            agd = agd_step(&agd, &oracle, l, &spec).unwrap();
            asgd = asgd_step(&asgd, &noiseless, l, &spec, &mut rng).unwrap();
        }
        assert_eq!(gd, sgd);
        assert_eq!(agd, asgd);
    }
}

#[test]
fn batch_oracle_error_decays_like_inverse_sqrt() {
    let oracle = BatchMeanOracle {
        mean: scalar(0.3),
        sigma: 1.0,
    };
    let x = scalar(1.0);
    let exact = oracle.exact_gradient(&x);
    let draws = 1000;
    let mut rng = stream(11, 0);
    let mut logs = Vec::new();
    for l in [1.0, 4.0, 16.0, 64.0, 256.0] {
        let mean_err: f64 = (0..draws)
            .map(|_| {
                use mlopt::descent::StochasticGradientOracle;
                (oracle.sample_gradient(&x, l, &mut rng).unwrap() - &exact).norm()
            })
            .sum::<f64>()
            / draws as f64;
        // E|N(0, 1/l)| = √(2/(πl)).
        let predicted = (2.0 / (std::f64::consts::PI * l)).sqrt();
        assert!(mean_err / predicted > 0.5 && mean_err / predicted < 2.0, "l={l}: {mean_err}");
        logs.push((l.ln(), mean_err.ln()));
    }
    let slope = (logs[4].1 - logs[0].1) / (logs[4].0 - logs[0].0);
    assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
}

#[test]
fn sgd_step_deviation_matches_gaussian_mean_absolute_value() {
    let eta = 0.5;
    let spec = SmoothConvexSpec::new(1.0, 1.0).unwrap().with_eta(eta).unwrap();
    let oracle = GaussianNoiseOracle {
        inner: half_square(),
        sigma: 1.0,
        decay: 0.5,
    };
    let l = 16.0;
    let start = GdState::new(scalar(1.0));
    let exact = gd_step(&start, &half_square(), l, &spec).unwrap().x[0];
    let draws = 10_000;
    let mut rng = stream(5, 0);
    let mean_dev: f64 = (0..draws)
        .map(|_| (sgd_step(&start, &oracle, l, &spec, &mut rng).unwrap().x[0] - exact).abs())
        .sum::<f64>()
        / draws as f64;
    let predicted = eta * (2.0 / std::f64::consts::PI).sqrt() / l.sqrt();
    assert!((mean_dev / predicted - 1.0).abs() < 0.05, "{mean_dev} vs {predicted}");
}

#[test]
fn agd_with_equal_constants_solves_in_one_step() {
    let l_smooth = 3.0;
    let spec = SmoothConvexSpec::new(l_smooth, l_smooth).unwrap();
    assert_eq!(spec.tau_momentum(), 1.0);
    let oracle = QuadraticOracle {
        a: DMatrix::identity(2, 2) * l_smooth,
        minimizer: DVector::zeros(2),
    };
    let next = agd_step(&AgdState::new(DVector::from_vec(vec![1.0, -4.0])), &oracle, 1.0, &spec).unwrap();
    assert!(next.y.norm() < 1e-15);
}

fn lyapunov(state: &AgdState<f64>, oracle: &QuadraticOracle<f64>, mu: f64) -> f64 {
    let d = &state.y - &oracle.minimizer;
    let phi = 0.5 * d.dot(&(&oracle.a * &d));
    phi + 0.5 * mu * (&state.z - &oracle.minimizer).norm_squared()
}

#[test]
fn agd_lyapunov_function_contracts() {
    let spec = SmoothConvexSpec::new(0.25, 1.0).unwrap();
    let oracle = QuadraticOracle {
        a: DMatrix::identity(1, 1),
        minimizer: scalar(0.0),
    };
    let mut state = AgdState::new(scalar(1.0));
    let rate = 1.0 - spec.tau_momentum();
    assert_eq!(rate, 0.5);
    for _ in 0..50 {
        let next = agd_step(&state, &oracle, 1.0, &spec).unwrap();
        assert!(lyapunov(&next, &oracle, 0.25) <= rate * lyapunov(&state, &oracle, 0.25) + 1e-300);
        state = next;
    }
}

#[test]
fn asgd_lyapunov_recursion_holds_in_expectation() {
    let (mu, l_smooth, alpha, level) = (0.25, 1.0, 1.0, 4.0);
    let spec = SmoothConvexSpec::new(mu, l_smooth).unwrap();
    let exact = QuadraticOracle {
        a: DMatrix::identity(1, 1),
        minimizer: scalar(0.0),
    };
    // Gradient error with second moment (l^{−α})², the accuracy normalization η = 1/√L = 1.
    let oracle = GaussianNoiseOracle {
        inner: exact.clone(),
        sigma: 1.0,
        decay: alpha,
    };
    let replicates = 1000;
    let steps = 10;
    let mut values = vec![vec![0.0; replicates]; steps + 1];
    for r in 0..replicates {
        let mut rng = stream(21, r as u64);
        let mut state = AgdState::new(scalar(1.0));
        values[0][r] = lyapunov(&state, &exact, mu);
        for k in 0..steps {
            state = asgd_step(&state, &oracle, level, &spec, &mut rng).unwrap();
            values[k + 1][r] = lyapunov(&state, &exact, mu);
        }
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    };
    let tau = spec.tau_momentum();
    for k in 0..steps {
        let (prev, se_prev) = stats(&values[k]);
        let (next, se_next) = stats(&values[k + 1]);
        let bound = (1.0 - tau) * prev + level.powf(-2.0 * alpha);
        assert!(next <= bound + 3.0 * (se_next + (1.0 - tau) * se_prev), "step {k}: {next} > {bound}");
    }
}

fn spd_strategy() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    (2usize..5).prop_flat_map(|n| {
        (
            proptest::collection::vec(-1.0f64..1.0, n * n),
            proptest::collection::vec(0.1f64..5.0, n),
            proptest::collection::vec(-3.0f64..3.0, n),
            proptest::collection::vec(-3.0f64..3.0, n),
        )
            .prop_map(move |(q, eig, xs, x0)| {
                let qr = DMatrix::from_vec(n, n, q).qr();
                let q = qr.q();
                let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
                (a, DVector::from_vec(xs), DVector::from_vec(x0))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn gd_contracts_each_step((a, x_star, x0) in spd_strategy(), eta_frac in 0.1f64..1.0) {
        let eig = a.clone().symmetric_eigen().eigenvalues;
        let mu = eig.min();
        let l_smooth = eig.max();
        let floor = 1e-14 * (1.0 + x_star.norm());
        let spec = SmoothConvexSpec::new(mu, l_smooth).unwrap().with_eta(eta_frac / l_smooth).unwrap();
        let oracle = QuadraticOracle { a, minimizer: x_star.clone() };
        let mut state = GdState::new(x0);
        for _ in 0..50 {
            let next = gd_step(&state, &oracle, 1.0, &spec).unwrap();
            let before = (&state.x - &x_star).norm();
            let after = (&next.x - &x_star).norm();
            prop_assert!(after <= spec.gd_rate() * before * (1.0 + 1e-12) + floor);
            state = next;
        }
    }

    #[test]
    fn agd_lyapunov_contracts_on_quadratics((a, x_star, x0) in spd_strategy()) {
        let eig = a.clone().symmetric_eigen().eigenvalues;
        let mu = eig.min();
        let spec = SmoothConvexSpec::new(mu, eig.max()).unwrap();
        // Round-off floor: iterates cannot resolve x* beyond machine precision.
        let floor = 1e-28 * eig.max() * (1.0 + x_star.norm_squared());
        let oracle = QuadraticOracle { a, minimizer: x_star };
        let mut state = AgdState::new(x0);
        let rate = 1.0 - spec.tau_momentum();
        for _ in 0..50 {
            let next = agd_step(&state, &oracle, 1.0, &spec).unwrap();
            let before = lyapunov(&state, &oracle, mu);
            prop_assert!(lyapunov(&next, &oracle, mu) <= rate * before * (1.0 + 1e-10) + floor);
            state = next;
        }
    }
}

#[test]
fn multilevel_descent_reaches_tolerance_on_shifted_oracle() {
    let eta = 0.5;
    let spec = SmoothConvexSpec::new(1.0, 1.0).unwrap().with_eta(eta).unwrap();
    let oracle = ShiftedQuadraticOracle { dim: 1, alpha: 1.0 };
    let model = ConvergenceModel::new(1.0 - eta, 1.0, 1.0).unwrap();
    for p in 3..=10 {
        let eps = 2f64.powi(-p);
        let schedule = multilevel_schedule(&model, eps).unwrap();
        let run = run_multilevel_descent(
            Algorithm::Gd,
            &schedule,
            DescentOracle::Exact(&oracle),
            &spec,
            scalar(1.0),
            Some(&scalar(0.0)),
        )
        .unwrap();
        let x = run.final_state.iterate()[0];
        assert!(x.abs() <= eps, "eps {eps}: {x}");
        assert_eq!(run.final_state.cost(), schedule.total_cost());
        assert_eq!(run.trajectory.len(), schedule.levels.len());

        // The iterates realize the scalar recursion exactly.
        let mut expected = 1.0;
        for rec in &run.trajectory {
            expected = (1.0 - eta) * expected + eta * rec.level.powf(-1.0);
            assert!((rec.error.unwrap() - expected).abs() <= 1e-15 * (1.0 + expected));
        }
    }
}

#[test]
fn empty_schedule_returns_start() {
    let spec = SmoothConvexSpec::new(1.0, 1.0).unwrap();
    let schedule = LevelSchedule {
        levels: vec![],
        epsilon: 1.0,
        kind: ScheduleKind::Multilevel,
    };
    for algorithm in [Algorithm::Gd, Algorithm::Agd] {
        let run = run_multilevel_descent(
            algorithm,
            &schedule,
            DescentOracle::Exact(&half_square()),
            &spec,
            scalar(2.0),
            None,
        )
        .unwrap();
        assert_eq!(run.final_state.iterate()[0], 2.0);
        assert_eq!(run.final_state.cost(), 0.0);
    }
}

#[test]
fn stochastic_runs_are_reproducible_and_cost_exact() {
    let spec = SmoothConvexSpec::new(0.25, 1.0).unwrap();
    let oracle = GaussianNoiseOracle {
        inner: half_square(),
        sigma: 1.0,
        decay: 1.0,
    };
    let model = ConvergenceModel::new(0.75, 1.0, 1.0).unwrap();
    let schedule = single_level_schedule(&model, 0.05).unwrap();
    let run = |seed| {
        let mut rng = stream(seed, 0);
        run_multilevel_descent(
            Algorithm::Asgd,
            &schedule,
            DescentOracle::Stochastic(&oracle, &mut rng),
            &spec,
            scalar(1.0),
            None,
        )
        .unwrap()
    };
    let a = run(3);
    let b = run(3);
    assert_eq!(a.final_state, b.final_state);
    assert_eq!(a.final_state.cost(), schedule.total_cost());
}

#[test]
fn oracle_kind_must_match_algorithm() {
    let spec = SmoothConvexSpec::new(1.0, 1.0).unwrap();
    let schedule = LevelSchedule {
        levels: vec![1.0],
        epsilon: 1.0,
        kind: ScheduleKind::SingleLevel,
    };
    let r = run_multilevel_descent(
        Algorithm::Sgd,
        &schedule,
        DescentOracle::Exact(&half_square()),
        &spec,
        scalar(1.0),
        None,
    );
    assert!(r.is_err());
}

struct Exploding;

impl GradientOracle<f64> for Exploding {
    fn dim(&self) -> usize {
        1
    }

    fn gradient(&self, x: &DVector<f64>, level: f64) -> Result<DVector<f64>> {
        Ok(if level > 2.0 { scalar(f64::NAN) } else { x.clone() })
    }
}

#[test]
fn non_finite_gradient_reports_last_state() {
    let spec = SmoothConvexSpec::new(1.0, 1.0).unwrap().with_eta(0.5).unwrap();
    let schedule = LevelSchedule {
        levels: vec![1.0, 2.0, 3.0],
        epsilon: 1.0,
        kind: ScheduleKind::Multilevel,
    };
    let err = run_multilevel_descent(Algorithm::Gd, &schedule, DescentOracle::Exact(&Exploding), &spec, scalar(1.0), None)
        .unwrap_err();
    match err.last_state {
        DescentState::Plain(s) => {
            assert_eq!(s.iteration, 2);
            assert_eq!(s.x[0], 0.25);
            assert_eq!(s.cost, 3.0);
        }
        DescentState::Accelerated(_) => panic!("wrong state kind"),
    }
    assert!(matches!(err.error, mlopt::Error::Diverged { iteration: 2, .. }));
}

#[test]
fn sharpness_bound_values() {
    assert!((sharpness_lower_bound(0.5f64, 1.0, 0.1) - 5.0).abs() < 1e-12);
    assert!(sharpness_lower_bound(0.5f64, 1.0, 1e300) < 1e-299);
    let check = check_sharpness(0.5f64, 1.0, 1e300, 1.0, &[]).unwrap();
    assert!(check.reached && check.holds());
}

#[test]
fn multilevel_schedules_respect_sharpness_bound() {
    for alpha in [0.5, 1.0, 2.0] {
        for c in [0.3, 0.5, 0.8] {
            let eta = 1.0 - c;
            let model = ConvergenceModel::new(c, alpha, 1.0).unwrap();
            for p in 3..=10 {
                let eps = 2f64.powi(-p);
                for s in [multilevel_schedule(&model, eps).unwrap(), single_level_schedule(&model, eps).unwrap()] {
                    let check = check_sharpness(eta, alpha, eps, 1.0, &s.levels).unwrap();
                    assert!(check.reached, "schedule must reach the tolerance");
                    assert!(check.holds(), "cost {} below bound {}", check.cost, check.bound);
                }
            }
        }
    }
}
