use dynosmith::harness::{canonical_json, ExperimentConfig, Method, TrialSpec};
use dynosmith::hyperopt::{gcv_select_rho, GcvConfig};
use dynosmith::io::Table;
use dynosmith::metrics::{coefficient_f1, coefficient_mae, SUPPORT_TOL};
use dynosmith::sindy::{
    fit_fixed_sparsity, median, CoefficientMatrix, FeatureLibrary, FitOptions, Sparsity, SubsetSearch,
};
use dynosmith::smoothing::{
    finite_difference, kalman_objective, kalman_smooth, savitzky_golay, tv_smooth, KalmanConfig, SavgolConfig, TvConfig,
};
use dynosmith::systems::{add_noise, integrate, MeasurementSet, OdeSystem, SystemKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A smooth signal plus noise on `n` coordinates.
fn noisy(n: usize, m: usize, dt: f64, seed: u64) -> MeasurementSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = (0..m).map(|i| i as f64 * dt).collect();
    let obs = DMatrix::from_fn(n, m, |c, i| {
        (times[i] * (1.0 + c as f64)).sin() + 0.1 * gaussian(&mut rng)
    });
    MeasurementSet::from_observations(times, obs).unwrap()
}

fn system() -> impl Strategy<Value = SystemKind> {
    (0..SystemKind::ALL.len()).prop_map(|i| SystemKind::ALL[i])
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn true_coefficients_reproduce_the_vector_field(
        kind in system(),
        x in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let sys = OdeSystem::new(kind);
        let x = &x[..sys.dim()];
        let model = sys.true_coefficients().apply(x);
        for (a, b) in model.iter().zip(sys.rhs(x)) {
            prop_assert!((a - b).abs() <= 1e-10, "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn f1_ignores_scale_and_shared_row_order(
        seed in any::<u64>(),
        scale in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
        perm in Just([2usize, 0, 1]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = FeatureLibrary::new(3, 2);
        let sparse = |rng: &mut ChaCha8Rng| {
            DMatrix::from_fn(3, lib.len(), |_, _| if rng.random::<f64>() < 0.3 { gaussian(rng) } else { 0.0 })
        };
        let (e, t) = (sparse(&mut rng), sparse(&mut rng));
        let f1 = |e: &DMatrix<f64>, t: &DMatrix<f64>| {
            coefficient_f1(
                &CoefficientMatrix::new(lib.clone(), e.clone()).unwrap(),
                &CoefficientMatrix::new(lib.clone(), t.clone()).unwrap(),
                SUPPORT_TOL,
            )
            .unwrap()
        };
        let base = f1(&e, &t);
        prop_assert_eq!(f1(&(&e * scale), &t), base);
        let permute = |m: &DMatrix<f64>| DMatrix::from_fn(3, m.ncols(), |r, j| m[(perm[r], j)]);
        prop_assert_eq!(f1(&permute(&e), &permute(&t)), base);
    }

    #[test]
    fn mae_grows_by_the_added_error(seed in any::<u64>(), c in 1e-3f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = OdeSystem::new(SystemKind::Lorenz).true_coefficients();
        let lib = truth.library().clone();
        let (n, p) = (3, lib.len());
        let mut est = truth.clone();
        // an entry already at or above the truth moves strictly away from it
        let (r, j) = (rng.random_range(0..n), rng.random_range(0..p));
        est.values_mut()[(r, j)] += rng.random::<f64>();
        let before = coefficient_mae(&est, &truth).unwrap();
        est.values_mut()[(r, j)] += c;
        let after = coefficient_mae(&est, &truth).unwrap();
        prop_assert!((after - before - c / (n * p) as f64).abs() <= 1e-12);
    }

    #[test]
    fn median_ignores_order(mut v in prop::collection::vec(-1e6f64..1e6, 1..40), seed in any::<u64>()) {
        let m = median(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..v.len()).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(median(&v), m);
    }

    #[test]
    fn table_round_trips(cols in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 0..20), 1..5)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new();
        for (i, c) in cols.into_iter().enumerate() {
            t.push(format!("c{i}"), c);
        }
        t.write(&path).unwrap();
        let back = Table::read(&path).unwrap();
        // a table of only empty columns has no data rows to distinguish them by
        if t.n_rows() > 0 {
            prop_assert_eq!(back, t);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kalman_scales_with_the_data(seed in any::<u64>(), c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], log_rho in -4.0f64..4.0) {
        let z = noisy(2, 80, 0.05, seed);
        let cfg = KalmanConfig::new(10f64.powf(log_rho));
        let a = kalman_smooth(&z, &cfg).unwrap();
        let zc = MeasurementSet::from_observations(z.times.clone(), &z.observations * c).unwrap();
        let b = kalman_smooth(&zc, &cfg).unwrap();
        prop_assert!(rel_diff(&b.states_hat, &(&a.states_hat * c)) <= 1e-10);
        prop_assert!(rel_diff(&b.derivatives_hat, &(&a.derivatives_hat * c)) <= 1e-10);
    }

    #[test]
    fn kalman_solution_is_a_minimum(seed in any::<u64>(), log_rho in -4.0f64..4.0) {
        let z = noisy(1, 60, 0.1, seed);
        let cfg = KalmanConfig::new(10f64.powf(log_rho));
        let r = kalman_smooth(&z, &cfg).unwrap();
        let best = kalman_objective(&z, &cfg, &r.states_hat, &r.derivatives_hat, None).unwrap().total;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..10 {
            let dx = DMatrix::from_fn(1, 60, |_, _| gaussian(&mut rng));
            let dv = DMatrix::from_fn(1, 60, |_, _| gaussian(&mut rng));
            let norm = (dx.norm_squared() + dv.norm_squared()).sqrt();
            let (dx, dv) = (dx * (1e-3 / norm), dv * (1e-3 / norm));
            let moved = kalman_objective(&z, &cfg, &(&r.states_hat + dx), &(&r.derivatives_hat + dv), None)
                .unwrap()
                .total;
            prop_assert!(moved >= best * (1.0 - 1e-12), "{moved} < {best}");
        }
    }

    #[test]
    fn kalman_terms_are_monotone_in_rho(seed in any::<u64>()) {
        let z = noisy(1, 100, 0.01, seed);
        let terms: Vec<_> = [1e-4, 1e-3, 1e-2, 1e-1, 1.0]
            .iter()
            .map(|&rho| {
                let cfg = KalmanConfig::new(rho);
                let r = kalman_smooth(&z, &cfg).unwrap();
                kalman_objective(&z, &cfg, &r.states_hat, &r.derivatives_hat, None).unwrap()
            })
            .collect();
        for w in terms.windows(2) {
            prop_assert!(w[1].measurement >= w[0].measurement * (1.0 - 1e-9));
            prop_assert!(w[1].process <= w[0].process * (1.0 + 1e-9));
        }
    }

    #[test]
    fn constant_input_is_flat(c in -1e3f64..1e3, m in 10usize..60, log_param in -4.0f64..4.0) {
        let times: Vec<f64> = (0..m).map(|i| i as f64 * 0.01).collect();
        let z = MeasurementSet::from_observations(times, DMatrix::from_element(2, m, c)).unwrap();
        let p = 10f64.powf(log_param);
        let results = [
            kalman_smooth(&z, &KalmanConfig::new(p)).unwrap(),
            tv_smooth(&z, &TvConfig::new(p)).unwrap(),
            savitzky_golay(&z, &SavgolConfig::new(5)).unwrap(),
            finite_difference(&z).unwrap(),
        ];
        let tol = 1e-10 * c.abs().max(1.0);
        for r in results {
            prop_assert!(r.derivatives_hat.amax() <= tol * 100.0, "{:?}", r.method);
            prop_assert!(r.states_hat.map(|v| v - c).amax() <= tol, "{:?}", r.method);
        }
    }

    #[test]
    fn smoothers_are_deterministic(seed in any::<u64>()) {
        let z = noisy(2, 50, 0.02, seed);
        let run = || {
            [
                kalman_smooth(&z, &KalmanConfig::new(0.1)).unwrap(),
                tv_smooth(&z, &TvConfig::new(0.01)).unwrap(),
                savitzky_golay(&z, &SavgolConfig::new(8)).unwrap(),
                finite_difference(&z).unwrap(),
            ]
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn library_order_does_not_change_the_fit(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = FeatureLibrary::new(2, 3);
        let states = DMatrix::from_fn(2, 80, |_, _| gaussian(&mut rng));
        let theta = lib.evaluate(&states).unwrap();
        let dxdt = DMatrix::from_fn(2, 80, |r, i| {
            2.0 * theta[(1 + r, i)] - theta[(6, i)] + 0.1 * gaussian(&mut rng)
        });
        let opts = FitOptions::default();
        let sparsity = Sparsity::PerRow(vec![k, k]);
        let base = fit_fixed_sparsity(&lib, &theta, &dxdt, &sparsity, &opts).unwrap();

        let p = lib.len();
        let mut perm: Vec<usize> = (0..p).collect();
        for i in (1..p).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let terms: Vec<Vec<u32>> = perm.iter().map(|&j| lib.terms()[j].clone()).collect();
        let plib = FeatureLibrary::from_terms(2, terms).unwrap();
        let ptheta = DMatrix::from_fn(p, 80, |j, i| theta[(perm[j], i)]);
        let moved = fit_fixed_sparsity(&plib, &ptheta, &dxdt, &sparsity, &opts).unwrap();
        let a = base.coefficients.values();
        let b = moved.coefficients.values();
        for r in 0..2 {
            for (j, &src) in perm.iter().enumerate() {
                prop_assert!((b[(r, j)] - a[(r, src)]).abs() <= 1e-9 * (1.0 + a[(r, src)].abs()));
            }
        }
    }

    #[test]
    fn refit_on_the_chosen_support_is_idempotent(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lib = FeatureLibrary::new(2, 3);
        let states = DMatrix::from_fn(2, 60, |_, _| gaussian(&mut rng));
        let theta = lib.evaluate(&states).unwrap();
        let dxdt = DMatrix::from_fn(2, 60, |_, _| gaussian(&mut rng));
        let fit = fit_fixed_sparsity(&lib, &theta, &dxdt, &Sparsity::PerRow(vec![k, k]), &FitOptions::default())
            .unwrap();
        for (r, support) in fit.supports.iter().enumerate() {
            let a = DMatrix::from_fn(60, support.len(), |i, j| theta[(support[j], i)]);
            let y = DVector::from_fn(60, |i, _| dxdt[(r, i)]);
            let beta = a.svd(true, true).solve(&y, 1e-14).unwrap();
            for (j, &s) in support.iter().enumerate() {
                let got = fit.coefficients.values()[(r, s)];
                prop_assert!((got - beta[j]).abs() <= 1e-12 * (1.0 + beta[j].abs()));
            }
        }
    }

    #[test]
    fn swaps_never_worsen_the_greedy_support(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = DMatrix::from_fn(12, 50, |_, _| gaussian(&mut rng));
        let y: Vec<f64> = (0..50).map(|_| gaussian(&mut rng)).collect();
        let search = SubsetSearch::new(&theta, 0.01);
        let target = search.target(&theta, &y);
        let greedy = search.greedy(&target, k).1;
        let swapped = search.greedy_swap(&target, k).1;
        prop_assert!(swapped <= greedy * (1.0 + 1e-12));
    }

    #[test]
    fn same_seed_same_measurements(seed in any::<u64>(), eta in 0.0f64..0.3) {
        let traj = integrate(&OdeSystem::new(SystemKind::Duffing), &[1.0, 0.5], 1.0, 0.01).unwrap();
        let a = add_noise(&traj, eta, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = add_noise(&traj, eta, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&a.observations, &b.observations);
        prop_assert_eq!(a.noise_std.to_bits(), b.noise_std.to_bits());
    }

    #[test]
    fn trial_seeds_depend_on_the_trial_only(index in 0usize..1000, other in 0usize..1000) {
        let cfg = ExperimentConfig::default();
        let spec = |method, trial_index| TrialSpec {
            system: SystemKind::Hopf,
            method,
            noise: 0.1,
            duration: 16.0,
            trial_index,
        };
        let s = cfg.trial_seed(&spec(Method::KalmanGrid, index));
        prop_assert_eq!(s, cfg.trial_seed(&spec(Method::TvGrid, index)));
        prop_assert_ne!(cfg.trial_key(&spec(Method::KalmanGrid, index)), cfg.trial_key(&spec(Method::TvGrid, index)));
        if other != index {
            prop_assert_ne!(s, cfg.trial_seed(&spec(Method::KalmanGrid, other)));
        }
    }

    #[test]
    fn canonical_json_ignores_key_order(a in any::<i32>(), b in "[a-z]{0,8}", c in any::<bool>()) {
        let x: serde_json::Value =
            serde_json::from_str(&format!(r#"{{"a":{a},"n":{{"b":"{b}","c":{c}}}}}"#)).unwrap();
        let y: serde_json::Value =
            serde_json::from_str(&format!(r#"{{"n":{{"c":{c},"b":"{b}"}},"a":{a}}}"#)).unwrap();
        prop_assert_eq!(canonical_json(&x), canonical_json(&y));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn gcv_ignores_coordinate_labels(seed in any::<u64>()) {
        let z = noisy(2, 120, 0.02, seed);
        let swapped = MeasurementSet::from_observations(
            z.times.clone(),
            DMatrix::from_fn(2, 120, |r, i| z.observations[(1 - r, i)]),
        )
        .unwrap();
        let cfg = GcvConfig::default().with_seed(seed);
        let a = gcv_select_rho(&z, &cfg).unwrap();
        let b = gcv_select_rho(&swapped, &cfg).unwrap();
        prop_assert!((a.rho_star.log10() - b.rho_star.log10()).abs() <= 1e-9);
        prop_assert_eq!(a.converged, b.converged);
    }
}

#[test]
fn noise_is_unbiased() {
    let traj = integrate(&OdeSystem::new(SystemKind::VanDerPol), &[2.0, 0.0], 16.0, 0.01).unwrap();
    let n_values = traj.states.len() as f64;
    let mut outside = 0;
    for seed in 0..20 {
        let z = add_noise(&traj, 0.2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mean = (&z.observations - &traj.states).sum() / n_values;
        if mean.abs() > 3.0 * z.noise_std / n_values.sqrt() {
            outside += 1;
        }
    }
    // a 3 sigma band leaves about 0.3% of seeds outside
    assert!(outside <= 1, "{outside} of 20 seeds outside the band");
}

/// Classical RK4 with a fixed step.
fn rk4(sys: &OdeSystem, x0: &[f64], duration: f64, h: f64) -> Vec<f64> {
    let steps = (duration / h).round() as usize;
    let mut x = x0.to_vec();
    let axpy = |x: &[f64], k: &[f64], a: f64| x.iter().zip(k).map(|(x, k)| x + a * k).collect::<Vec<_>>();
    for _ in 0..steps {
        let k1 = sys.rhs(&x);
        let k2 = sys.rhs(&axpy(&x, &k1, h / 2.0));
        let k3 = sys.rhs(&axpy(&x, &k2, h / 2.0));
        let k4 = sys.rhs(&axpy(&x, &k3, h));
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

#[test]
fn fixed_step_reference_converges_to_the_adaptive_solution_at_fourth_order() {
    for (kind, x0) in [
        (SystemKind::Duffing, vec![1.0, 0.5]),
        (SystemKind::VanDerPol, vec![2.0, 0.0]),
        (SystemKind::Lorenz, vec![1.0, 1.0, 20.0]),
    ] {
        let sys = OdeSystem::new(kind);
        let truth = integrate(&sys, &x0, 1.0, 0.01).unwrap();
        let end: Vec<f64> = truth.states.column(truth.len() - 1).iter().copied().collect();
        let err = |h: f64| {
            rk4(&sys, &x0, 1.0, h)
                .iter()
                .zip(&end)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(0.02), err(0.01));
        // order 4 halves to 1/16; allow for the reference's own error
        assert!(coarse / fine > 12.0, "{kind}: {coarse:e} -> {fine:e}");
    }
}
