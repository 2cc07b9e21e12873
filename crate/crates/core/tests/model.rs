use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use winrisk::model::{
    augmented_vars, load_problem, parse_problem, Dynamics, NoiseChannel, NoiseMoments, RiskProblem, Severity,
};
use winrisk::poly::{names, MultiIndex, Polynomial};

fn ou(sigma: f64) -> Dynamics {
    let tx = names(&["t", "x"]);
    Dynamics::continuous(
        &names(&["x"]),
        vec![Polynomial::parse("-x", &tx).unwrap()],
        vec![vec![Polynomial::constant(&tx, sigma)]],
    )
    .unwrap()
}

fn quadratic_map() -> Dynamics {
    let vars = names(&["t", "x", "l"]);
    Dynamics::discrete(
        &names(&["x"]),
        vec![Polynomial::parse("0.5*x - 0.3*x^2 + 0.1*l", &vars).unwrap()],
        vec![NoiseChannel {
            variable: "l".into(),
            moments: NoiseMoments::new(vec![1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0]).unwrap(),
            law: None,
        }],
        0.25,
    )
    .unwrap()
}

/// Every dynamics the tests exercise: the bundled ones plus OU and a
/// discrete map.
fn all_dynamics() -> Vec<Dynamics> {
    let mut out: Vec<Dynamics> =
        ["twist", "oscillator", "stochastic-oscillator"].iter().map(|n| load_problem(n).unwrap().dynamics).collect();
    out.push(ou(0.4));
    out.push(quadratic_map());
    out
}

fn random_poly(vars: &[String], deg: u32, coefs: &[i32]) -> Polynomial {
    let monos = MultiIndex::all_up_to(vars.len(), deg);
    Polynomial::from_terms(vars, monos.into_iter().zip(coefs).map(|(m, &c)| (m, c as f64 / 4.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_is_linear(
        which in 0usize..5,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        cv in prop::collection::vec(-4i32..=4, 40),
        cw in prop::collection::vec(-4i32..=4, 40),
    ) {
        let dynamics = &all_dynamics()[which];
        let vars = augmented_vars(dynamics.states());
        let v = random_poly(&vars, 2, &cv);
        let w = random_poly(&vars, 2, &cw);
        let combo = v.scale(a).add(&w.scale(b)).unwrap();
        let left = dynamics.apply_augmented_generator(&combo).unwrap();
        let lv = dynamics.apply_augmented_generator(&v).unwrap();
        let lw = dynamics.apply_augmented_generator(&w).unwrap();
        let right = lv.scale(a).add(&lw.scale(b)).unwrap();
        prop_assert!(left.sub(&right).unwrap().max_abs_coefficient() <= 1e-12 * (1.0 + left.max_abs_coefficient()));
    }
}

#[test]
fn constants_and_stopping_powers_are_annihilated() {
    for dynamics in all_dynamics() {
        let vars = augmented_vars(dynamics.states());
        assert!(dynamics.apply_augmented_generator(&Polynomial::constant(&vars, 1.0)).unwrap().is_zero());
        for a in 0..=8 {
            let s = Polynomial::monomial(&vars, MultiIndex::new([vec![a], vec![0; vars.len() - 1]].concat()), 1.0);
            assert!(dynamics.apply_augmented_generator(&s).unwrap().is_zero(), "s^{a}");
        }
    }
}

#[test]
fn dynamics_degree_is_monotone_and_dominates_k() {
    for dynamics in all_dynamics() {
        let degrees: Vec<u32> = (1..=4).map(|k| dynamics.dynamics_degree(k).unwrap()).collect();
        for (k, w) in (1..).zip(degrees.windows(2)) {
            assert!(w[0] >= k && w[1] >= w[0], "{degrees:?}");
        }
    }
    assert_eq!(ou(0.4).dynamics_degree(2).unwrap(), 2);
    assert_eq!(load_problem("twist").unwrap().dynamics.dynamics_degree(4).unwrap(), 5);
}

/// Brute-force scan of the degree-4 basis under the discrete quadratic map.
#[test]
fn discrete_dynamics_degree_matches_a_scan() {
    let d = quadratic_map();
    let vars = augmented_vars(d.states());
    let worst = MultiIndex::all_up_to(vars.len(), 4)
        .into_iter()
        .map(|m| d.apply_augmented_generator(&Polynomial::monomial(&vars, m, 1.0)).unwrap().degree())
        .max()
        .unwrap();
    assert_eq!(d.dynamics_degree(2).unwrap(), 2.max(worst.div_ceil(2)));
}

/// Euler-Maruyama difference quotient of `x^2` against the generator image
/// for OU, at ten states.
#[test]
fn dynkin_difference_quotient_matches_generator() {
    let sigma = 0.5;
    let d = ou(sigma);
    let tx = names(&["t", "x"]);
    let v = Polynomial::parse("x^2", &tx).unwrap();
    let lv = d.apply_generator(&v).unwrap();
    let dt = 1e-4;
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..10 {
        let x = -1.0 + 0.2 * i as f64;
        let quotients: Vec<f64> = (0..draws)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let next = x - x * dt + sigma * dt.sqrt() * z;
                (next * next - x * x) / dt
            })
            .collect();
        let mean = quotients.iter().sum::<f64>() / draws as f64;
        let var = quotients.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let expect = lv.evaluate(&[0.0, x]).unwrap();
        assert!((mean - expect).abs() <= 3.0 * se + 2.0 * x * x * dt, "x = {x}: {mean} vs {expect} (se {se})");
    }
}

#[test]
fn generator_examples() {
    let d = ou(0.3);
    let stx = names(&["s", "t", "x"]);
    let v = Polynomial::parse("s*x^2", &stx).unwrap();
    let expect = Polynomial::parse("-2*s*x^2 + 0.09*s", &stx).unwrap();
    let got = d.apply_augmented_generator(&v).unwrap();
    assert!(got.sub(&expect).unwrap().max_abs_coefficient() < 1e-15);
    let t = Polynomial::parse("t", &stx).unwrap();
    assert_eq!(d.apply_augmented_generator(&t).unwrap(), Polynomial::constant(&stx, 1.0));
}

const BASE: &str = r#"
name = "line"
states = ["x"]
horizon = 2.0
window = 0.5
cost = "x"

[state_set]
box = [[-1.0, 1.0]]

[initial_set]
box = [[-0.5, 0.5]]

[dynamics]
kind = "continuous"
drift = ["0"]
"#;

fn errors(p: &RiskProblem) -> Vec<String> {
    p.validate().into_iter().filter(|d| d.severity == Severity::Error).map(|d| d.message).collect()
}

#[test]
fn validation_examples() {
    for name in ["twist", "oscillator", "stochastic-oscillator"] {
        assert!(errors(&load_problem(name).unwrap()).is_empty(), "{name}");
    }
    let mut p = parse_problem(BASE, "base").unwrap();
    assert!(errors(&p).is_empty());
    p.window = 0.0;
    assert!(errors(&p).iter().any(|e| e.contains("window must be positive")));

    let unbounded = BASE.replace("box = [[-1.0, 1.0]]", "constraints = [\"1 - x^2\"]");
    let q = parse_problem(&unbounded, "unbounded").unwrap();
    assert!(errors(&q).iter().any(|e| e.contains("A1")), "{:?}", errors(&q));
}

#[test]
fn cost_range_examples() {
    assert_eq!(load_problem("oscillator").unwrap().cost_range().unwrap(), (-2.0, 1.5));
    let constant = parse_problem(&BASE.replace("cost = \"x\"", "cost = \"0.7\""), "c").unwrap();
    assert_eq!(constant.cost_range().unwrap(), (0.7, 0.7));
    let square = parse_problem(&BASE.replace("cost = \"x\"", "cost = \"x^2\""), "sq").unwrap();
    let (lo, hi) = square.cost_range().unwrap();
    assert!(lo <= 0.0 && hi >= 1.0);
}
