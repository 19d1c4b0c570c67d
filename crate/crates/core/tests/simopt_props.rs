use proptest::prelude::*;
use quadsim::experiment::{CollectConfig, ExperimentConfig, Oracle};
use quadsim::sensing::NoiseConfig;
use quadsim::simopt::{bo_minimize, build_dataset, objective, BoConfig, Evaluation, GpHyper, GpModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Noise-free two-minute log from the oracle; the truth must beat every
// other point of a coarse grid around it.
#[test]
fn truth_is_the_grid_minimum_on_clean_data() {
    let mut cfg = ExperimentConfig::desk();
    cfg.noise = NoiseConfig::none();
    cfg.collect = CollectConfig { duration: 120.0, flight_duration: 60.0, ..cfg.collect };
    let log = Oracle::new(&cfg).collect(&cfg, 3).unwrap();
    let obj = cfg.simopt.objective.clone();
    let data = build_dataset(&log, obj.len, obj.stride).unwrap();
    let truth = [cfg.oracle.k_f, cfg.oracle.t_m, cfg.oracle.latency];
    let at = |xi: &[f64; 3]| objective(xi, &data, &obj, &cfg.params, &cfg.nominal).value;
    let best = at(&truth);
    let mut worse = 0;
    for kf in [0.9, 0.95, 1.0, 1.05, 1.1] {
        for tm in [0.5, 0.75, 1.0, 1.25, 1.5] {
            for d in [0.0, 0.5, 1.0, 1.5, 2.0] {
                if (kf, tm, d) == (1.0, 1.0, 1.0) {
                    continue;
                }
                let xi = [truth[0] * kf, truth[1] * tm, truth[2] * d];
                let v = at(&xi);
                assert!(best < v, "objective at truth {best} not below {v} at {xi:?}");
                worse += 1;
            }
        }
    }
    assert_eq!(worse, 124);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gp_interpolates_noise_free_data(seed in any::<u64>(), n in 3usize..15) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
        let hyper = GpHyper { signal_var: 1.0, length_scales: vec![0.3, 0.3], noise_var: 1e-10 };
        let gp = GpModel::with_hyper(&x, &y, hyper).unwrap();
        let spread = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
        for (xi, yi) in x.iter().zip(&y) {
            let (m, s) = gp.predict(xi);
            prop_assert!((m - yi).abs() < 1e-3 * (1.0 + spread), "{m} vs {yi}");
            prop_assert!(s < 1e-2 * (1.0 + spread));
        }
    }

    #[test]
    fn bo_history_has_exactly_n_evals(seed in any::<u64>(), n_init in 2usize..6, extra in 0usize..6) {
        let cfg = BoConfig { n_evals: n_init + extra, n_init, n_candidates: 64, n_refine: 1, gp_restarts: 1, log_objective: false };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut calls = 0;
        let r = bo_minimize(|x| { calls += 1; Evaluation::ok((x[0] - 0.3).powi(2)) }, &[0.0], &[1.0], &cfg, &mut rng).unwrap();
        prop_assert_eq!(r.history.len(), cfg.n_evals);
        prop_assert_eq!(calls, cfg.n_evals);
    }
}
