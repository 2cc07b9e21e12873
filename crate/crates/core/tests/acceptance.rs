//! Acceptance suite. Prints one `PASS` or `FAIL` line per criterion and
//! exits 0 so the regular test run stays green while known gaps stay
//! visible. Set `WINRISK_ACCEPTANCE_STRICT=1` to turn any `FAIL` into a
//! nonzero exit, and `WINRISK_ACCEPTANCE_HEAVY=1` to also attempt the
//! twist k=4 and oscillator k=5 solves (tens of minutes to hours on one
//! core).

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use winrisk::certify::{solve_bound, validate, CertificateReport, ValidateOptions, ValidationReport, Verdict};
use winrisk::conic::{sdpa, solve, ConicProgram, PsdBlock, SolverOptions, SymEntry};
use winrisk::model::{load_problem, parse_problem, RiskKind, RiskProblem};
use winrisk::moments::{build_relaxation, localizing_block, MomentBasis};
use winrisk::montecarlo::es_sorted_tail;
use winrisk::poly::{names, Polynomial};

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn heavy() -> bool {
    std::env::var("WINRISK_ACCEPTANCE_HEAVY").is_ok_and(|v| v == "1")
}

fn with_risk(name: &str, risk: RiskKind) -> RiskProblem {
    let mut p = load_problem(name).unwrap();
    p.risk = risk;
    p
}

const ES15: RiskKind = RiskKind::Es { epsilon: 0.15 };

/// Validation run: 1000 seeded paths, then one certified solve per order.
fn run(name: &str, risk: RiskKind, ks: &[u32]) -> ValidationReport {
    let start = Instant::now();
    let report = validate(&with_risk(name, risk), ks, &ValidateOptions::default()).unwrap();
    eprintln!("  [{name} {risk:?} k = {ks:?}: {:.0} s]", start.elapsed().as_secs_f64());
    report
}

fn bound_of(report: &ValidationReport, k: u32) -> Option<f64> {
    report.reports.iter().find(|r| r.k == k).and_then(|r| r.bound)
}

/// Compares solved bounds with reference values; unsolved orders count as
/// misses.
fn compare(report: &ValidationReport, reference: &[(u32, f64, f64)]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for &(k, want, tol) in reference {
        match bound_of(report, k) {
            Some(got) => {
                let hit = (got - want).abs() <= tol;
                ok &= hit;
                parts.push(format!("k={k} {got:.4} vs {want} ({})", if hit { "ok" } else { "miss" }));
            }
            None => {
                ok = false;
                parts.push(format!("k={k} not solved vs {want}"));
            }
        }
    }
    (ok, parts.join(", "))
}

fn sound(r: &CertificateReport) -> bool {
    r.status.is_some_and(|s| s.is_success()) && !r.residual_suspect
}

fn criterion_dominance(reports: &[&ValidationReport], osc_es: &ValidationReport) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for rep in reports {
        for r in rep.reports.iter().filter(|r| sound(r)) {
            let b = r.bound.unwrap();
            if b + 0.01 < rep.empirical.sup {
                ok = false;
                notes.push(format!("{} {:?} k={} {b:.4} < sup {:.4}", rep.problem, rep.risk, r.k, rep.empirical.sup));
            }
        }
    }
    let es_sup = osc_es.empirical.sup;
    let near = (es_sup - 0.9921).abs() <= 0.02;
    let tightest = osc_es.reports.iter().filter(|r| sound(r)).filter_map(|r| r.bound).fold(f64::INFINITY, f64::min);
    ok &= near && es_sup <= tightest;
    notes.push(format!("oscillator ES sup {es_sup:.4} (reference 0.9921), tightest ES bound {tightest:.4}"));
    Outcome { id: 6, title: "dominance over 1000 sampled paths", pass: ok, detail: notes.join("; ") }
}

fn criterion_monotone(reports: &[&ValidationReport]) -> Outcome {
    let bad: Vec<String> =
        reports.iter().filter(|r| !r.monotone).map(|r| format!("{} {:?}", r.problem, r.risk)).collect();
    let detail = if bad.is_empty() { format!("{} hierarchies nonincreasing", reports.len()) } else { bad.join(", ") };
    Outcome { id: 7, title: "hierarchy monotonicity", pass: bad.is_empty(), detail }
}

fn criterion_mass(reports: &[&ValidationReport]) -> Outcome {
    let mut solves = 0;
    let mut bad = Vec::new();
    for rep in reports {
        for r in rep.reports.iter().filter(|r| r.status.is_some_and(|s| s.is_success())) {
            solves += 1;
            for m in r.mass_checks.iter().filter(|m| !m.pass) {
                bad.push(format!("{} k={} {} = {:.3e}", rep.problem, r.k, m.name, m.value));
            }
        }
    }
    let detail = if bad.is_empty() { format!("{solves} solves, all invariants within 1e-6") } else { bad.join(", ") };
    Outcome { id: 8, title: "mass invariants", pass: bad.is_empty(), detail }
}

fn criterion_es_vs_mean(mean: &ValidationReport, es: &ValidationReport) -> Outcome {
    let opts = SolverOptions::default();
    let osc = load_problem("oscillator").unwrap();
    let near_one = solve_bound(&with_risk("oscillator", RiskKind::Es { epsilon: 1.0 - 1e-9 }), 2, &opts).unwrap().bound;
    let mean2 = solve_bound(&osc, 2, &opts).unwrap().bound;
    let mut ok = (near_one - mean2).abs() <= 1e-3;
    let mut notes = vec![format!("k=2 ES(1-1e-9) {near_one:.6} vs mean {mean2:.6}")];
    for r in &es.reports {
        if let (Some(e), Some(m)) = (r.bound, bound_of(mean, r.k)) {
            let hit = e >= m - 1e-6;
            ok &= hit;
            notes.push(format!("k={} ES {e:.4} >= mean {m:.4}", r.k));
        }
    }
    Outcome { id: 9, title: "ES and mean consistency", pass: ok, detail: notes.join(", ") }
}

fn line_problem() -> RiskProblem {
    let text = r#"
name = "line"
states = ["x"]
horizon = 2.0
window = 0.5
cost = "x"

[state_set]
box = [[-1.0, 1.0]]

[initial_set]
box = [[0.2, 0.9]]

[dynamics]
kind = "continuous"
drift = ["0"]
"#;
    parse_problem(text, "line").unwrap()
}

fn min_eigenvalue(m: &[f64], n: usize) -> f64 {
    let mat = faer::Mat::<f64>::from_fn(n, n, |r, c| m[r * n + c]);
    mat.self_adjoint_eigenvalues(faer::Side::Lower).unwrap().into_iter().fold(f64::INFINITY, f64::min)
}

fn es_brute_force(values: &[f64], eps: f64) -> f64 {
    let n = values.len() as f64;
    let objective = |l: f64| l + values.iter().map(|v| (v - l).max(0.0)).sum::<f64>() / (n * eps);
    values.iter().copied().map(objective).fold(f64::INFINITY, f64::min)
}

fn criterion_micro() -> Outcome {
    let problem = line_problem();
    let mut liouville = 0.0f64;
    for k in 1..=3 {
        let rel = build_relaxation(&problem, k).unwrap();
        for s_star in [0.5, 1.3, 2.0] {
            let y = common::trajectory_vector(&rel, &problem, s_star, &|_| vec![0.6]);
            liouville = liouville.max(common::worst_equality(&rel, &y));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let v = names(&["x", "y"]);
    let basis = MomentBasis::new(&v, 6);
    let mut dirac = f64::INFINITY;
    for _ in 0..20 {
        let point = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let moments = basis.dirac_moments(&point);
        for guard in ["1", "1 - x^2", "1 - y^2", "2 - x^2 - y^2"] {
            let block = localizing_block(&basis, &Polynomial::parse(guard, &v).unwrap(), 3).unwrap();
            dirac = dirac.min(min_eigenvalue(&block.evaluate(&moments), block.size()));
        }
    }
    let one = |e: u32| if e % 2 == 0 { 1.0 / (e as f64 + 1.0) } else { 0.0 };
    let uniform: Vec<f64> = basis.monomials().iter().map(|m| m.exponents().iter().map(|&e| one(e)).product()).collect();
    let mut unif = f64::INFINITY;
    for guard in ["1", "1 - x^2", "1 - y^2"] {
        let block = localizing_block(&basis, &Polynomial::parse(guard, &v).unwrap(), 3).unwrap();
        unif = unif.min(min_eigenvalue(&block.evaluate(&uniform), block.size()));
    }

    let mut es_gap = 0.0f64;
    for _ in 0..100 {
        let values: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
        let eps = rng.random_range(0.01..1.0);
        let fast = es_sorted_tail(&values, &[1.0; 50], eps).unwrap();
        es_gap = es_gap.max((fast - es_brute_force(&values, eps)).abs());
    }
    Outcome {
        id: 10,
        title: "micro-scale oracles",
        pass: liouville <= 1e-10 && dirac >= -1e-10 && unif > 0.0 && es_gap <= 1e-6,
        detail: format!(
            "Liouville residual {liouville:.1e}, Dirac min eig {dirac:.1e}, uniform min eig {unif:.1e}, ES gap {es_gap:.1e}"
        ),
    }
}

fn toy() -> ConicProgram {
    let e = |row, col, value| SymEntry { row, col, value };
    let moment = PsdBlock::new(2, vec![], vec![(0, e(0, 0, 1.0)), (1, e(0, 1, 1.0)), (2, e(1, 1, 1.0))]);
    let guard = PsdBlock::new(1, vec![], vec![(0, e(0, 0, 1.0)), (2, e(0, 0, -1.0))]);
    ConicProgram::new(3, vec![(1, 1.0)], vec![(vec![(0, 1.0)], 1.0)], vec![moment, guard]).unwrap()
}

fn criterion_sdpa() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let opts = SolverOptions::default();
    let osc = build_relaxation(&load_problem("oscillator").unwrap(), 2).unwrap().to_conic();
    let mut ok = true;
    let mut notes = Vec::new();
    for (label, prog) in [("toy", toy()), ("oscillator k=2", osc)] {
        let path = dir.path().join("p.dat-s");
        sdpa::export_sdpa(&prog, &path, serde_json::Value::Null).unwrap();
        let (back, _) = sdpa::import_sdpa(&path).unwrap();
        let a = solve(&prog, &opts).unwrap().bound();
        let b = solve(&back, &opts).unwrap().bound();
        ok &= (a - b).abs() <= 1e-5;
        notes.push(format!("{label} |diff| {:.1e}", (a - b).abs()));
    }
    Outcome { id: 11, title: "SDPA round trip", pass: ok, detail: notes.join(", ") }
}

fn criterion_optimizers(twist4: Option<&ValidationReport>) -> Outcome {
    let title = "twist k=4 optimizer recovery";
    let Some(rep) = twist4 else {
        return Outcome {
            id: 5,
            title,
            pass: false,
            detail: "twist k=4 not solved (set WINRISK_ACCEPTANCE_HEAVY=1 or export it with `winrisk bound --solver export-only`)"
                .into(),
        };
    };
    let Some(o) = rep.reports.iter().find(|r| r.k == 4).and_then(|r| r.optimizers.clone()) else {
        return Outcome { id: 5, title, pass: false, detail: "twist k=4 solve failed".into() };
    };
    let want = [-0.8705, 0.5586, -0.1027];
    let x_ok = o.x0_star.as_ref().is_some_and(|x| x.iter().zip(want).all(|(a, b)| (a - b).abs() <= 0.05));
    let t_ok = o.t_star.is_some_and(|t| (t - 1.8315).abs() <= 0.05);
    let r_ok = o.rank_ratios.iter().all(|(_, r)| *r < 1e-3);
    Outcome {
        id: 5,
        title,
        pass: x_ok && t_ok && r_ok,
        detail: format!("x0* {:?}, t* {:?}, rank ratios {:?}", o.x0_star, o.t_star, o.rank_ratios),
    }
}

fn main() {
    let strict = std::env::var("WINRISK_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut out = Vec::new();

    let twist_ks: Vec<u32> = if heavy() { vec![1, 2, 3, 4] } else { vec![1, 2, 3] };
    let twist = run("twist", RiskKind::Mean, &twist_ks);
    let (mut ok, mut detail) =
        compare(&twist, &[(1, 0.4687, 0.02), (2, 0.3497, 0.02), (3, 0.3475, 0.02), (4, 0.3470, 0.02)]);
    if !heavy() {
        ok = false;
        detail.push_str(" (k=4 needs WINRISK_ACCEPTANCE_HEAVY=1 or an external solver)");
    }
    detail.push_str(&format!("; sampled sup {:.4}", twist.empirical.sup));
    out.push(Outcome { id: 1, title: "twist mean bounds", pass: ok, detail });

    let osc_ks: Vec<u32> = if heavy() { vec![1, 2, 3, 4, 5] } else { vec![1, 2, 3, 4] };
    let osc = run("oscillator", RiskKind::Mean, &osc_ks);
    let (mut ok, mut detail) =
        compare(&osc, &[(1, 1.5, 0.02), (2, 0.6376, 0.02), (3, 0.3852, 0.02), (4, 0.2741, 0.02), (5, 0.2433, 0.03)]);
    if !heavy() {
        ok = false;
        detail.push_str(" (k=5 needs WINRISK_ACCEPTANCE_HEAVY=1)");
    }
    detail.push_str(&format!("; sampled sup {:.4}", osc.empirical.sup));
    out.push(Outcome { id: 2, title: "oscillator mean bounds", pass: ok, detail });

    let osc_es = run("oscillator", ES15, &[1, 2, 3]);
    let (ok, detail) = compare(&osc_es, &[(1, 1.5, 0.03), (2, 1.5, 0.03), (3, 1.1949, 0.03)]);
    out.push(Outcome { id: 3, title: "oscillator ES bounds (eps 0.15)", pass: ok, detail });

    let sto = run("stochastic-oscillator", RiskKind::Mean, &[1, 2, 3]);
    let sto_es = run("stochastic-oscillator", ES15, &[3]);
    let (ok_mean, d_mean) = compare(&sto, &[(1, 1.5, 0.02), (2, 0.6489, 0.02), (3, 0.4113, 0.02)]);
    let (ok_es, d_es) = compare(&sto_es, &[(3, 1.2344, 0.03)]);
    out.push(Outcome {
        id: 4,
        title: "stochastic oscillator bounds",
        pass: ok_mean && ok_es,
        detail: format!("mean {d_mean}; ES {d_es}"),
    });

    out.push(criterion_optimizers(heavy().then_some(&twist)));
    let all = [&twist, &osc, &osc_es, &sto, &sto_es];
    out.push(criterion_dominance(&all, &osc_es));
    out.push(criterion_monotone(&all));
    out.push(criterion_mass(&all));
    out.push(criterion_es_vs_mean(&osc, &osc_es));
    out.push(criterion_micro());
    out.push(criterion_sdpa());
    out.sort_by_key(|o| o.id);

    println!();
    for o in &out {
        println!("{} criterion {:2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.title, o.detail);
    }
    let failed = out.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria pass", out.len() - failed, out.len());
    for rep in all {
        for r in rep.reports.iter().filter(|r| r.verdict == Verdict::Fail || r.is_suspect()) {
            println!("  note: {} {:?} k={}: {}", rep.problem, rep.risk, r.k, r.suspect.join("; "));
        }
    }
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
