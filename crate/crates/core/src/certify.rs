//! Post-solve checks on relaxation solutions.
//!
//! * mass invariants that every feasible pseudo-moment vector satisfies,
//! * near-rank-one optimizer recovery from the initial and terminal
//!   moment matrices,
//! * a sampled spot check of the dual certificate (the auxiliary function
//!   `v` rebuilt from the Liouville multipliers),
//! * comparison of each bound against Monte Carlo statistics.
//!
//! All checks except the Monte Carlo comparison work in the scaled
//! coordinates of the relaxation; recovered optimizers are reported in the
//! problem's own units.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{self, ConicError, ConicSolution, Duals, SolveStatus, SolverOptions};
use crate::model::{augmented_vars, RiskKind, RiskProblem, SemialgebraicSet};
use crate::moments::{self, localizing_block, EqualityKind, MeasureTag, MomentBasis, MomentError, MomentRelaxation};
use crate::montecarlo::{self, SampleError, SampleOptions, TrajectoryBatch};
use crate::poly::{names, MultiIndex, Polynomial};

#[derive(Debug, thiserror::Error)]
pub enum CertifyError {
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Poly(#[from] crate::poly::PolyError),
    #[error("the solution carries no dual multipliers")]
    NoDuals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassCheck {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

/// Upper bound on the mass of `y-`: `(1 + T + h)^2 / 4 - T h - h`.
pub fn minus_mass_bound(horizon: f64, window: f64) -> f64 {
    (1.0 + horizon + window).powi(2) / 4.0 - horizon * window - window
}

/// Zeroth-moment checks in scaled units, each with slack `tol`.
pub fn check_mass_invariants(rel: &MomentRelaxation, y: &[f64], tol: f64) -> Vec<MassCheck> {
    let (t_end, h) = (rel.meta.horizon, rel.meta.window);
    let mass = |tag| rel.moments(tag, y).map(|m| m[0]);
    let mut out = Vec::new();
    let mut push = |name: &str, value: Option<f64>, lo: f64, hi: f64| {
        if let Some(v) = value {
            out.push(MassCheck { name: name.into(), value: v, lo, hi, pass: v >= lo - tol && v <= hi + tol });
        }
    };
    push("y0 mass", mass(MeasureTag::Initial), 1.0, 1.0);
    push("y+ mass", mass(MeasureTag::Plus), h, h);
    push("ytau mass", mass(MeasureTag::Terminal), 1.0, 1.0);
    push("y- mass", mass(MeasureTag::Minus), 0.0, minus_mass_bound(t_end, h));
    if let RiskKind::Es { epsilon } = rel.meta.risk {
        push("ynu mass", mass(MeasureTag::Nu), 1.0, 1.0);
        push("ynuhat mass", mass(MeasureTag::NuHat), 1.0 - epsilon, 1.0 - epsilon);
    }
    out
}

/// Ratio of the second to the largest eigenvalue of a symmetric matrix
/// (row-major), 0 for a 1x1 matrix.
pub fn rank_ratio(m: &[f64], n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[i * n + j] + m[j * n + i]));
    let Ok(mut ev) = a.self_adjoint_eigenvalues(faer::Side::Lower) else { return f64::INFINITY };
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 {
        return f64::INFINITY;
    }
    ev[1].max(0.0) / ev[0]
}

/// Normalized order-`order` moment matrix of `moments` (over `basis`), its
/// rank ratio, and the degree-one moments when the ratio is below
/// `threshold`.
pub fn recover_atom(basis: &MomentBasis, moments: &[f64], order: u32, threshold: f64) -> (f64, Option<Vec<f64>>) {
    let one = Polynomial::constant(&names(&[]), 1.0);
    let Ok(block) = localizing_block(basis, &one, order) else { return (f64::INFINITY, None) };
    let mass = moments[0];
    if !(mass > 0.0) {
        return (f64::INFINITY, None);
    }
    let m: Vec<f64> = block.evaluate(moments).iter().map(|v| v / mass).collect();
    let ratio = rank_ratio(&m, block.size());
    let nv = basis.variables().len();
    let point = (ratio < threshold).then(|| {
        (0..nv).map(|i| moments[basis.index_of(&MultiIndex::unit(nv, i)).expect("degree one")] / mass).collect()
    });
    (ratio, point)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveredOptimizers {
    pub x0_star: Option<Vec<f64>>,
    pub t_star: Option<f64>,
    pub xp_star: Option<Vec<f64>>,
    /// `(measure, second / top eigenvalue)`.
    pub rank_ratios: Vec<(String, f64)>,
}

/// Reads `(t*, x0*)` from the initial measure and `x_p*` from the terminal
/// measure when their moment matrices are numerically rank one.
pub fn extract_optimizers(rel: &MomentRelaxation, y: &[f64], threshold: f64) -> RecoveredOptimizers {
    let mut out = RecoveredOptimizers::default();
    let scaling = &rel.meta.scaling;
    for tag in [MeasureTag::Initial, MeasureTag::Terminal] {
        let (Some(slot), Some(m)) = (rel.slot(tag), rel.moments(tag, y)) else { continue };
        let (ratio, point) = recover_atom(&slot.basis, &m, slot.order, threshold);
        out.rank_ratios.push((tag.name().to_string(), ratio));
        if let Some(p) = point {
            let x = scaling.unscale_state(&p[1..]);
            if tag == MeasureTag::Initial {
                out.t_star = Some(p[0] * scaling.time_scale);
                out.x0_star = Some(x);
            } else {
                out.xp_star = Some(x);
            }
        }
    }
    out
}

/// Tail part of an ES certificate: `w(q)` and the multiplier of
/// `<1, nu> = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TailCertificate {
    pub w: Polynomial,
    pub beta: f64,
}

/// Dual certificate in scaled coordinates. `v` is over `(s, t, x)`,
/// `gamma` multiplies `<1, y0> = 1` and `xi` multiplies `<1, y+> = h`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualCertificate {
    pub v: Polynomial,
    pub gamma: f64,
    pub xi: f64,
    pub tail: Option<TailCertificate>,
}

impl DualCertificate {
    pub fn negated(&self) -> DualCertificate {
        DualCertificate { v: self.v.scale(-1.0), ..self.clone() }
    }
}

/// Collects equality multipliers by row kind.
pub fn certificate_from_duals(rel: &MomentRelaxation, duals: &Duals) -> DualCertificate {
    let stx = augmented_vars(&rel.meta.states);
    let q = names(&["q"]);
    let mut v = Vec::new();
    let mut w = Vec::new();
    let (mut gamma, mut xi, mut beta) = (0.0, 0.0, 0.0);
    for (eq, &l) in rel.equalities.iter().zip(&duals.equalities) {
        match &eq.kind {
            EqualityKind::Liouville(e) => v.push((MultiIndex::new(e.clone()), l)),
            EqualityKind::InitialMass => gamma = l,
            EqualityKind::WindowMass => xi = l,
            EqualityKind::TailMass => beta = l,
            EqualityKind::TailMoment(j) => w.push((MultiIndex::new(vec![*j]), l)),
        }
    }
    let tail = matches!(rel.meta.risk, RiskKind::Es { .. })
        .then(|| TailCertificate { w: Polynomial::from_terms(&q, w), beta });
    DualCertificate { v: Polynomial::from_terms(&stx, v), gamma, xi, tail }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub worst_slack: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub conditions: Vec<ConditionCheck>,
    /// Most negative slack over all conditions.
    pub worst: f64,
    /// Magnitude reference for the slacks.
    pub scale: f64,
}

impl CertificateCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst >= -tol * self.scale
    }
}

fn sample_in(set: &SemialgebraicSet, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let bx = set.enclosing_box()?;
    for _ in 0..10_000 {
        let x: Vec<f64> = bx.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect();
        if set.contains(&x, 0.0) {
            return Some(x);
        }
    }
    None
}

/// Evaluates the certificate inequalities at `samples` random points per
/// support (scaled coordinates):
///
/// | measure | inequality                                  | where                  |
/// |---------|---------------------------------------------|------------------------|
/// | `ytau`  | `v(s, s, x) >= 0`                           | `[h, T] x X`           |
/// | `y0`    | `gamma - v(s, 0, x) >= 0`                   | `[h, T] x X0`          |
/// | `y+`    | `xi - Lv - p/h >= 0` (ES: `xi - Lv + w(p)/h`)| `Omega+ x X`          |
/// | `y-`    | `-Lv >= 0`                                  | `Omega- x X`           |
/// | `ynu`   | `beta - eps w(q) - q >= 0`                  | `[-1, 1]`              |
/// | `ynuhat`| `-w(q) >= 0`                                | `[-1, 1]`              |
pub fn check_certificate(
    rel: &MomentRelaxation,
    cert: &DualCertificate,
    samples: usize,
    seed: u64,
) -> Result<CertificateCheck, CertifyError> {
    let sp = &rel.scaled_problem;
    let stx = augmented_vars(&sp.states);
    let n = sp.states.len();
    let (t_end, h) = (sp.horizon, sp.window);
    let gap = h + sp.dynamics.dt().unwrap_or(0.0);
    let lv = sp.dynamics.generator_on(&stx)?.apply(&cert.v.embed(&stx)?)?;
    let cost = &sp.cost;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conditions = Vec::new();
    let mut point = vec![0.0; n + 2];
    let mut run = |name: &str, rng: &mut ChaCha8Rng, f: &mut dyn FnMut(&mut ChaCha8Rng) -> Option<f64>| {
        let mut worst = f64::INFINITY;
        let mut count = 0;
        for _ in 0..samples {
            if let Some(s) = f(rng) {
                worst = worst.min(s);
                count += 1;
            }
        }
        conditions.push(ConditionCheck {
            name: name.into(),
            worst_slack: if count > 0 { worst } else { 0.0 },
            samples: count,
        });
    };
    let eval = |p: &Polynomial, x: &[f64]| p.evaluate(x).expect("matching dimension");

    run("ytau", &mut rng, &mut |rng| {
        let s = rng.random_range(h..=t_end);
        let x = sample_in(&sp.state_set, rng)?;
        point[0] = s;
        point[1] = s;
        point[2..].copy_from_slice(&x);
        Some(eval(&cert.v, &point))
    });
    run("y0", &mut rng, &mut |rng| {
        let s = rng.random_range(h..=t_end);
        let x = sample_in(&sp.initial_set, rng)?;
        point[0] = s;
        point[1] = 0.0;
        point[2..].copy_from_slice(&x);
        Some(cert.gamma - eval(&cert.v, &point))
    });
    run("y+", &mut rng, &mut |rng| {
        let s = rng.random_range(h..=t_end);
        let t = rng.random_range(s - h..=s);
        let x = sample_in(&sp.state_set, rng)?;
        point[0] = s;
        point[1] = t;
        point[2..].copy_from_slice(&x);
        let p = eval(cost, &x);
        let gain = match &cert.tail {
            Some(tc) => eval(&tc.w, &[p]) / h,
            None => -p / h,
        };
        Some(cert.xi - eval(&lv, &point) + gain)
    });
    run("y-", &mut rng, &mut |rng| {
        let s = rng.random_range(h..=t_end);
        if s - gap < 0.0 {
            return None;
        }
        let t = rng.random_range(0.0..=s - gap);
        let x = sample_in(&sp.state_set, rng)?;
        point[0] = s;
        point[1] = t;
        point[2..].copy_from_slice(&x);
        Some(-eval(&lv, &point))
    });
    if let (Some(tc), RiskKind::Es { epsilon }) = (&cert.tail, rel.meta.risk) {
        run("ynu", &mut rng, &mut |rng| {
            let q: f64 = rng.random_range(-1.0..=1.0);
            Some(tc.beta - epsilon * eval(&tc.w, &[q]) - q)
        });
        run("ynuhat", &mut rng, &mut |rng| {
            let q: f64 = rng.random_range(-1.0..=1.0);
            Some(-eval(&tc.w, &[q]))
        });
    }
    let worst = conditions.iter().map(|c| c.worst_slack).fold(f64::INFINITY, f64::min);
    let mut scale = 1.0 + cert.gamma.abs().max(cert.xi.abs()).max(cert.v.max_abs_coefficient());
    if let Some(tc) = &cert.tail {
        scale = scale.max(1.0 + tc.beta.abs().max(tc.w.max_abs_coefficient()));
    }
    Ok(CertificateCheck { conditions, worst, scale })
}

/// Rebuilds the certificate from the solution's multipliers and checks it.
pub fn dual_certificate_check(
    rel: &MomentRelaxation,
    sol: &ConicSolution,
    samples: usize,
    seed: u64,
) -> Result<CertificateCheck, CertifyError> {
    let duals = sol.duals.as_ref().ok_or(CertifyError::NoDuals)?;
    check_certificate(rel, &certificate_from_duals(rel, duals), samples, seed)
}

/// A solved relaxation with its bound in the problem's cost units.
#[derive(Clone, Debug)]
pub struct BoundResult {
    pub k: u32,
    pub relaxation: MomentRelaxation,
    pub solution: ConicSolution,
    /// The certified value: the dual bound when available.
    pub bound: f64,
    pub moment_value: f64,
    pub seconds: f64,
}

/// Assembles and solves the degree-`k` relaxation of `problem`.
pub fn solve_bound(problem: &RiskProblem, k: u32, opts: &SolverOptions) -> Result<BoundResult, CertifyError> {
    let start = Instant::now();
    let rel = moments::build_relaxation(problem, k)?;
    let solution = conic::solve(&rel.to_conic(), opts)?;
    Ok(BoundResult {
        k,
        bound: rel.report_value(solution.bound()),
        moment_value: rel.report_value(solution.value),
        relaxation: rel,
        solution,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Which per-time reduction of the sampled batch is compared with bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmpiricalConvention {
    /// Largest per-path value (deterministic dynamics).
    PerPathMax,
    /// Statistic of the pooled cross-path distribution (stochastic
    /// dynamics, where the bound is on an expectation).
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub convention: EmpiricalConvention,
    /// Supremum over window end times of the compared statistic.
    pub sup: f64,
    /// Time at which the supremum is reached.
    pub argsup: Option<f64>,
    /// Supremum of the per-path statistic, for reference.
    pub per_path_sup: f64,
    pub exit_fraction: f64,
    pub mean_stop_time: f64,
}

/// Empirical supremum of the windowed statistic matching `problem.risk`.
pub fn empirical_summary(problem: &RiskProblem, batch: &TrajectoryBatch) -> Result<EmpiricalSummary, CertifyError> {
    let series = match problem.risk {
        RiskKind::Mean => montecarlo::windowed_mean_series(batch, &problem.cost, problem.window),
        RiskKind::Es { epsilon } => montecarlo::windowed_es_series(batch, &problem.cost, problem.window, epsilon),
    };
    let convention =
        if problem.dynamics.is_stochastic() { EmpiricalConvention::Pooled } else { EmpiricalConvention::PerPathMax };
    let series = match series {
        Ok(s) => s,
        // every path stops before one window has elapsed
        Err(SampleError::EmptyWindow) => {
            return Ok(EmpiricalSummary {
                paths: batch.count,
                dt: batch.dt,
                seed: batch.seed,
                convention,
                sup: f64::NAN,
                argsup: None,
                per_path_sup: f64::NAN,
                exit_fraction: batch.exit_fraction(),
                mean_stop_time: batch.mean_stop_time(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let (sup, argsup) = match convention {
        EmpiricalConvention::PerPathMax => (series.sup(), series.argsup()),
        EmpiricalConvention::Pooled => {
            let best =
                series.pooled.iter().enumerate().filter(|(_, v)| v.is_finite()).max_by(|a, b| a.1.total_cmp(b.1));
            (best.map(|b| *b.1).unwrap_or(f64::NAN), best.map(|b| series.times[b.0]))
        }
    };
    Ok(EmpiricalSummary {
        paths: batch.count,
        dt: batch.dt,
        seed: batch.seed,
        convention,
        sup,
        argsup,
        per_path_sup: series.sup(),
        exit_fraction: batch.exit_fraction(),
        mean_stop_time: batch.mean_stop_time(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateOptions {
    pub solver: SolverOptions,
    pub sample: SampleOptions,
    /// Slack allowed in `bound + tol >= empirical sup`.
    pub dominance_tol: f64,
    /// Mass-invariant slack (scaled units).
    pub mass_tol: f64,
    /// Points per support in the certificate spot check.
    pub certificate_samples: usize,
    pub rank_threshold: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            solver: SolverOptions::default(),
            sample: SampleOptions::default(),
            dominance_tol: 0.01,
            mass_tol: 1e-6,
            certificate_samples: 2000,
            rank_threshold: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub k: u32,
    pub status: Option<SolveStatus>,
    pub bound: Option<f64>,
    pub moment_value: Option<f64>,
    pub mass_checks: Vec<MassCheck>,
    pub certificate: Option<CertificateCheck>,
    pub optimizers: Option<RecoveredOptimizers>,
    pub empirical_sup: f64,
    pub verdict: Verdict,
    /// Reasons the bound should not be trusted; empty when it is sound.
    pub suspect: Vec<String>,
    /// Whether the suspicion comes from solver residuals (as opposed to the
    /// empirical comparison alone).
    pub residual_suspect: bool,
    pub message: String,
    pub seconds: f64,
}

impl CertificateReport {
    pub fn is_suspect(&self) -> bool {
        !self.suspect.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problem: String,
    pub risk: RiskKind,
    pub empirical: EmpiricalSummary,
    pub reports: Vec<CertificateReport>,
    /// Non-suspect bounds are nonincreasing in `k`.
    pub monotone: bool,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    /// Whether some bound with sound residuals fails its checks.
    pub fn has_failures(&self) -> bool {
        self.reports.iter().any(|r| r.verdict == Verdict::Fail && !r.residual_suspect)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let risk = match self.risk {
            RiskKind::Mean => "mean".to_string(),
            RiskKind::Es { epsilon } => format!("es (epsilon = {epsilon})"),
        };
        s.push_str(&format!("problem {}  risk {risk}\n", self.problem));
        let e = &self.empirical;
        s.push_str(&format!(
            "empirical: {} paths, dt {}, seed {}, {:?} sup {:.6}{}, per-path sup {:.6}, exit fraction {:.3}\n",
            e.paths,
            e.dt,
            e.seed,
            e.convention,
            e.sup,
            e.argsup.map(|t| format!(" at t = {t:.3}")).unwrap_or_default(),
            e.per_path_sup,
            e.exit_fraction
        ));
        s.push_str(" k  status        bound       mass  certificate   verdict  notes\n");
        for r in &self.reports {
            let mass = if r.mass_checks.iter().all(|m| m.pass) { "ok" } else { "FAIL" };
            let cert = r.certificate.as_ref().map(|c| format!("{:+.2e}", c.worst)).unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "{:2}  {:<12}  {:>10}  {:<4}  {:<12}  {:<7}  {}\n",
                r.k,
                r.status.map(|st| format!("{st:?}")).unwrap_or_else(|| "error".into()),
                r.bound.map(|b| format!("{b:.6}")).unwrap_or_else(|| "-".into()),
                mass,
                cert,
                format!("{:?}", r.verdict).to_lowercase(),
                if r.suspect.is_empty() { String::new() } else { format!("suspect: {}", r.suspect.join("; ")) },
            ));
            if let Some(o) = &r.optimizers {
                if o.x0_star.is_some() || o.xp_star.is_some() {
                    s.push_str(&format!("    x0* {:?}  t* {:?}  xp* {:?}\n", o.x0_star, o.t_star, o.xp_star));
                }
            }
        }
        s.push_str(&format!("monotone: {}\n", self.monotone));
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

fn residual_problems(sol: &ConicSolution, opts: &SolverOptions) -> Vec<String> {
    let r = &sol.residuals;
    let mut out = Vec::new();
    if !sol.status.is_success() {
        out.push(format!("solver status {:?}", sol.status));
    }
    let lim = 10.0 * opts.feas_tol;
    if r.primal_equality > lim {
        out.push(format!("equality residual {:.1e}", r.primal_equality));
    }
    if -r.min_eigenvalue > lim {
        out.push(format!("PSD violation {:.1e}", -r.min_eigenvalue));
    }
    if r.dual_infeasibility > lim {
        out.push(format!("dual infeasibility {:.1e}", r.dual_infeasibility));
    }
    if r.duality_gap > 10.0 * opts.gap_tol {
        out.push(format!("duality gap {:.1e}", r.duality_gap));
    }
    out
}

/// Builds the report for one solved relaxation against an empirical
/// supremum.
pub fn certify_result(result: &BoundResult, empirical_sup: f64, opts: &ValidateOptions) -> CertificateReport {
    let rel = &result.relaxation;
    let sol = &result.solution;
    let mass_checks = check_mass_invariants(rel, &sol.y, opts.mass_tol);
    let certificate = dual_certificate_check(rel, sol, opts.certificate_samples, opts.sample.seed).ok();
    let optimizers = extract_optimizers(rel, &sol.y, opts.rank_threshold);
    let mut suspect = residual_problems(sol, &opts.solver);
    let residual_suspect = !suspect.is_empty();
    if result.bound < empirical_sup {
        suspect.push(format!("bound below the empirical sup {empirical_sup:.6}"));
    }
    let dominates = !(result.bound + opts.dominance_tol < empirical_sup);
    let verdict = if mass_checks.iter().all(|m| m.pass) && dominates { Verdict::Pass } else { Verdict::Fail };
    CertificateReport {
        k: result.k,
        status: Some(sol.status),
        bound: Some(result.bound),
        moment_value: Some(result.moment_value),
        mass_checks,
        certificate,
        optimizers: Some(optimizers),
        empirical_sup,
        verdict,
        suspect,
        residual_suspect,
        message: sol.message.clone(),
        seconds: result.seconds,
    }
}

/// Whether the non-suspect bounds are nonincreasing in `k`, up to each
/// pair's reported duality gap (at least `gap_tol`).
pub fn is_monotone(reports: &[CertificateReport], gap_tol: f64) -> bool {
    let mut sound: Vec<(u32, f64, f64)> =
        reports.iter().filter(|r| !r.residual_suspect).filter_map(|r| r.bound.map(|b| (r.k, b, gap_tol))).collect();
    sound.sort_by_key(|e| e.0);
    sound.windows(2).all(|w| w[1].1 <= w[0].1 + w[0].2.max(w[1].2) * (1.0 + w[0].1.abs()))
}

/// Solves each `k`, samples the process once and cross-checks everything.
pub fn validate(problem: &RiskProblem, ks: &[u32], opts: &ValidateOptions) -> Result<ValidationReport, CertifyError> {
    let batch = montecarlo::simulate(problem, &opts.sample)?;
    let empirical = empirical_summary(problem, &batch)?;
    let mut warnings = Vec::new();
    if empirical.exit_fraction > 0.5 {
        warnings.push(format!(
            "{:.0}% of sampled paths leave X before the horizon (mean stop time {:.3}); check the state set",
            100.0 * empirical.exit_fraction,
            empirical.mean_stop_time
        ));
    }
    if !empirical.sup.is_finite() {
        warnings.push("no sampled path lasts a full window; the empirical comparison is vacuous".into());
    }
    let sup = if empirical.sup.is_finite() { empirical.sup } else { f64::NEG_INFINITY };
    let mut reports = Vec::new();
    for &k in ks {
        let report = match solve_bound(problem, k, &opts.solver) {
            Ok(res) => certify_result(&res, sup, opts),
            Err(e) => CertificateReport {
                k,
                status: None,
                bound: None,
                moment_value: None,
                mass_checks: Vec::new(),
                certificate: None,
                optimizers: None,
                empirical_sup: sup,
                verdict: Verdict::Fail,
                suspect: vec![e.to_string()],
                residual_suspect: true,
                message: e.to_string(),
                seconds: 0.0,
            },
        };
        reports.push(report);
    }
    let monotone = is_monotone(&reports, opts.solver.gap_tol);
    Ok(ValidationReport { problem: problem.name.clone(), risk: problem.risk, empirical, reports, monotone, warnings })
}
