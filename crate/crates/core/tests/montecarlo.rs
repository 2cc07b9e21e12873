use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use winrisk::model::{load_problem, parse_problem, RiskProblem};
use winrisk::montecarlo::{
    empirical_cdf, es_sorted_tail, simulate, windowed_es_series, windowed_mean_series, SampleOptions,
};

fn scalar(drift: &str, diffusion: &str, x0: (f64, f64), horizon: f64, window: f64) -> RiskProblem {
    let text = format!(
        r#"
name = "scalar"
states = ["x"]
horizon = {horizon}
window = {window}
cost = "x"

[state_set]
box = [[-100.0, 100.0]]

[initial_set]
box = [[{}, {}]]

[dynamics]
kind = "continuous"
drift = ["{drift}"]
diffusion = [["{diffusion}"]]
"#,
        x0.0, x0.1
    );
    parse_problem(&text, "scalar").unwrap()
}

fn opts(count: usize, dt: f64, seed: u64) -> SampleOptions {
    SampleOptions { count, dt, seed, ..SampleOptions::default() }
}

/// Brute-force Rockafellar-Uryasev: `min_l l + E[(V - l)+] / eps`. The
/// objective is piecewise linear with kinks at the samples, so the grid
/// holds every sample plus a fine uniform sweep.
fn es_brute_force(values: &[f64], weights: &[f64], eps: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    let objective =
        |l: f64| l + values.iter().zip(weights).map(|(v, w)| w / total * (v - l).max(0.0)).sum::<f64>() / eps;
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let sweep = (0..=2000).map(|i| lo + (hi - lo) * i as f64 / 2000.0);
    values.iter().copied().chain(sweep).map(objective).fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sorted_tail_matches_brute_force(
        values in prop::collection::vec(-5.0f64..5.0, 50),
        weights in prop::collection::vec(0.01f64..1.0, 50),
        eps in 0.01f64..1.0,
    ) {
        let uniform = vec![1.0; 50];
        for w in [&uniform, &weights] {
            let fast = es_sorted_tail(&values, w, eps).unwrap();
            let slow = es_brute_force(&values, w, eps);
            prop_assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        }
    }

    #[test]
    fn es_is_nonincreasing_in_epsilon(
        values in prop::collection::vec(-5.0f64..5.0, 1..40),
        a in 0.01f64..1.0,
        b in 0.01f64..1.0,
    ) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let w = vec![1.0; values.len()];
        prop_assert!(es_sorted_tail(&values, &w, lo).unwrap() >= es_sorted_tail(&values, &w, hi).unwrap() - 1e-12);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((es_sorted_tail(&values, &w, 1.0).unwrap() - mean).abs() < 1e-12);
    }
}

#[test]
fn zero_dynamics_give_constant_paths() {
    let p = scalar("0", "0", (0.3, 0.3), 1.0, 0.25);
    let batch = simulate(&p, &opts(5, 0.01, 3)).unwrap();
    for path in &batch.paths {
        assert_eq!(path.stop_index, 100);
        assert!(path.states.iter().all(|&x| x == 0.3));
    }
    let mean = windowed_mean_series(&batch, &p.cost, p.window).unwrap();
    assert!(mean.values.iter().chain(&mean.cross_mean).all(|&v| (v - 0.3).abs() < 1e-15));
}

#[test]
fn windowed_mean_of_a_ramp_lags_by_half_a_window() {
    let p = scalar("1", "0", (0.0, 0.0), 2.0, 0.5);
    let batch = simulate(&p, &opts(1, 0.01, 1)).unwrap();
    let mean = windowed_mean_series(&batch, &p.cost, p.window).unwrap();
    assert!((mean.times[0] - 0.5).abs() < 1e-12 && (mean.times.last().unwrap() - 2.0).abs() < 1e-12);
    for (t, v) in mean.times.iter().zip(&mean.values) {
        assert!((v - (t - 0.25)).abs() < 1e-9, "t = {t}: {v}");
    }
}

#[test]
fn brownian_variance_grows_linearly() {
    let sigma = 0.7;
    let p = scalar("0", &sigma.to_string(), (0.0, 0.0), 1.0, 0.5);
    let count = 10_000;
    let batch = simulate(&p, &opts(count, 0.01, 11)).unwrap();
    for (idx, t) in [(25, 0.25), (100, 1.0)] {
        let xs: Vec<f64> = batch.paths.iter().map(|path| path.point(idx, 1)[0]).collect();
        let m = xs.iter().sum::<f64>() / count as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (count - 1) as f64;
        let expect = sigma * sigma * t;
        let se = expect * (2.0 / (count - 1) as f64).sqrt();
        assert!((var - expect).abs() < 3.0 * se, "t = {t}: {var} vs {expect}");
    }
}

#[test]
fn stochastic_oscillator_paths_respect_the_state_set() {
    let p = load_problem("stochastic-oscillator").unwrap();
    let batch = simulate(&p, &opts(100, 5e-3, 1)).unwrap();
    let max_len = (p.horizon / 5e-3).round() as usize + 1;
    for path in &batch.paths {
        assert!(path.stop_index < max_len);
        assert_eq!(path.states.len(), (path.stop_index + 1) * 2);
        for i in 0..path.stop_index {
            assert!(p.state_set.contains(path.point(i, 2), 0.0));
        }
        if !path.exited {
            assert!(p.state_set.contains(path.point(path.stop_index, 2), 0.0));
        }
    }
}

#[test]
fn batches_are_reproducible_and_thread_independent() {
    let p = load_problem("stochastic-oscillator").unwrap();
    let a = simulate(&p, &SampleOptions { parallel: true, ..opts(64, 1e-2, 5) }).unwrap();
    let b = simulate(&p, &SampleOptions { parallel: false, ..opts(64, 1e-2, 5) }).unwrap();
    let c = simulate(&p, &opts(64, 1e-2, 6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let bits = |batch: &winrisk::montecarlo::TrajectoryBatch| -> Vec<u64> {
        batch.paths.iter().flat_map(|p| p.states.iter().map(|x| x.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn windowed_es_is_nonincreasing_in_epsilon_on_every_window() {
    let p = load_problem("stochastic-oscillator").unwrap();
    let batch = simulate(&p, &opts(50, 1e-2, 2)).unwrap();
    let levels = [0.05, 0.15, 0.5, 1.0];
    let series: Vec<_> = levels.iter().map(|&e| windowed_es_series(&batch, &p.cost, p.window, e).unwrap()).collect();
    for pair in series.windows(2) {
        for i in 0..pair[0].times.len() {
            assert!(pair[0].values[i] >= pair[1].values[i] - 1e-12);
            assert!(pair[0].pooled[i] >= pair[1].pooled[i] - 1e-12);
        }
    }
    let mean = windowed_mean_series(&batch, &p.cost, p.window).unwrap();
    for (a, b) in series[3].values.iter().zip(&mean.values) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(series[0].times.iter().all(|&t| t >= p.window - 1e-12 && t <= p.horizon + 1e-12));
}

#[test]
fn cdf_of_normal_draws_is_one_half_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let cdf = empirical_cdf(&draws, &vec![1.0; n]).unwrap();
    let se = (0.25 / n as f64).sqrt();
    assert!((cdf.eval(0.0) - 0.5).abs() < 3.0 * se);

    let single = empirical_cdf(&[1.5], &[1.0]).unwrap();
    assert_eq!(single.eval(1.4), 0.0);
    assert_eq!(single.eval(1.5), 1.0);
    let four = empirical_cdf(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]).unwrap();
    assert_eq!(four.quantile(0.5), 2.0);
}
