use winrisk::certify::{
    check_certificate, check_mass_invariants, dual_certificate_check, is_monotone, recover_atom, solve_bound, validate,
    DualCertificate, ValidateOptions, Verdict,
};
use winrisk::conic::SolverOptions;
use winrisk::model::augmented_vars as augmented;
use winrisk::model::{load_problem, parse_problem, RiskKind, RiskProblem};
use winrisk::moments::{build_relaxation, MeasureTag, MomentBasis};
use winrisk::montecarlo::SampleOptions;
use winrisk::poly::{names, Polynomial};

fn oscillator() -> RiskProblem {
    load_problem("oscillator").unwrap()
}

fn with_es(mut p: RiskProblem, epsilon: f64) -> RiskProblem {
    p.risk = RiskKind::Es { epsilon };
    p
}

#[test]
fn solved_oscillator_passes_every_mass_check() {
    let res = solve_bound(&oscillator(), 2, &SolverOptions::default()).unwrap();
    let checks = check_mass_invariants(&res.relaxation, &res.solution.y, 1e-6);
    assert_eq!(checks.len(), 4);
    assert!(checks.iter().all(|c| c.pass), "{checks:?}");

    let mut y = res.solution.y.clone();
    y[res.relaxation.slot(MeasureTag::Initial).unwrap().offset] = 0.9;
    let corrupted = check_mass_invariants(&res.relaxation, &y, 1e-6);
    assert!(!corrupted[0].pass);
    assert_eq!(corrupted[0].name, "y0 mass");
}

#[test]
fn es_solves_carry_the_tail_mass_checks() {
    let res = solve_bound(&with_es(oscillator(), 0.15), 2, &SolverOptions::default()).unwrap();
    let checks = check_mass_invariants(&res.relaxation, &res.solution.y, 1e-6);
    assert_eq!(checks.len(), 6);
    assert!(checks.iter().all(|c| c.pass), "{checks:?}");
    let nuhat = checks.iter().find(|c| c.name == "ynuhat mass").unwrap();
    assert!((nuhat.value - 0.85).abs() < 1e-6);
}

#[test]
fn dirac_moments_recover_their_atom() {
    let v = names(&["s", "x1", "x2"]);
    let basis = MomentBasis::new(&v, 4);
    let atom = [0.4, -0.3, 0.75];
    let (ratio, point) = recover_atom(&basis, &basis.dirac_moments(&atom), 2, 1e-3);
    assert!(ratio < 1e-12, "{ratio}");
    let point = point.unwrap();
    for (a, b) in point.iter().zip(atom) {
        assert!((a - b).abs() < 1e-9);
    }

    // a two-atom mixture is not rank one
    let mixed: Vec<f64> = basis
        .dirac_moments(&atom)
        .iter()
        .zip(basis.dirac_moments(&[-0.5, 0.2, 0.1]))
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let (ratio, point) = recover_atom(&basis, &mixed, 2, 1e-3);
    assert!(ratio > 1e-3 && point.is_none());
}

const STILL: &str = r#"
name = "still"
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

#[test]
fn constant_certificate_has_no_violation() {
    let problem = parse_problem(STILL, "still").unwrap();
    let rel = build_relaxation(&problem, 1).unwrap();
    let stx = augmented(&rel.meta.states);
    // scaled cost lies in [-1, 1], so xi = 1 / h dominates p / h
    let cert = DualCertificate { v: Polynomial::zero(&stx), gamma: 0.0, xi: 1.0 / rel.meta.window, tail: None };
    let check = check_certificate(&rel, &cert, 500, 3).unwrap();
    assert!(check.worst >= -1e-12, "{:?}", check.conditions);
    assert!(check.worst <= 1e-2);
}

#[test]
fn oscillator_certificate_holds_and_its_negation_fails() {
    let res = solve_bound(&oscillator(), 2, &SolverOptions::default()).unwrap();
    let check = dual_certificate_check(&res.relaxation, &res.solution, 2000, 1).unwrap();
    assert!(check.worst >= -1e-5, "{:?}", check.conditions);

    let cert = winrisk::certify::certificate_from_duals(&res.relaxation, res.solution.duals.as_ref().unwrap());
    let flipped = check_certificate(&res.relaxation, &cert.negated(), 2000, 1).unwrap();
    assert!(flipped.worst < -1e-3, "{:?}", flipped.conditions);
}

#[test]
fn es_near_one_matches_the_mean_and_es_dominates() {
    let opts = SolverOptions::default();
    for k in 1..=2 {
        let mean = solve_bound(&oscillator(), k, &opts).unwrap().bound;
        let near_one = solve_bound(&with_es(oscillator(), 1.0 - 1e-9), k, &opts).unwrap().bound;
        assert!((near_one - mean).abs() < 1e-3, "k = {k}: {near_one} vs {mean}");
        let es = solve_bound(&with_es(oscillator(), 0.15), k, &opts).unwrap().bound;
        assert!(es >= mean - 1e-6, "k = {k}: {es} < {mean}");
    }
}

#[test]
fn validation_passes_and_orders_the_hierarchy() {
    let opts = ValidateOptions {
        sample: SampleOptions { count: 200, ..SampleOptions::default() },
        ..ValidateOptions::default()
    };
    let report = validate(&oscillator(), &[1, 2], &opts).unwrap();
    assert!(report.monotone && !report.has_failures());
    assert!(report.reports.iter().all(|r| r.verdict == Verdict::Pass && !r.is_suspect()));
    assert!(is_monotone(&report.reports, 1e-6));
    let bounds: Vec<f64> = report.reports.iter().map(|r| r.bound.unwrap()).collect();
    assert!((bounds[0] - 1.5).abs() < 1e-4 && (bounds[1] - 0.6376).abs() < 0.02);
    assert!(bounds[1] + 0.01 >= report.empirical.sup);
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("\"verdict\":\"pass\""));
}

#[test]
fn an_optimistic_bound_is_flagged() {
    let opts = ValidateOptions::default();
    let res = solve_bound(&oscillator(), 2, &opts.solver).unwrap();
    let report = winrisk::certify::certify_result(&res, res.bound + 0.5, &opts);
    assert_eq!(report.verdict, Verdict::Fail);
    assert!(report.is_suspect());
    assert!(!report.residual_suspect);
}
