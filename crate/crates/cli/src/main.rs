//! `winrisk`: bound, sample and validate time-windowed risks from the
//! command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use winrisk::certify::{self, ValidateOptions};
use winrisk::conic::{self, sdpa, SolverOptions};
use winrisk::model::{bundled, parse_problem, RiskKind, RiskProblem, Severity};
use winrisk::moments::{build_relaxation, MomentRelaxation};
use winrisk::montecarlo::{self, SampleOptions};

/// Process exit codes.
mod exit {
    pub const USAGE: u8 = 2;
    pub const PARSE: u8 = 3;
    pub const INVALID_PROBLEM: u8 = 4;
    pub const SOLVER: u8 = 5;
    pub const IO: u8 = 6;
    pub const CERTIFICATION: u8 = 7;
}

const THREADS_ENV: &str = "WINRISK_THREADS";

#[derive(Parser)]
#[command(name = "winrisk", version, about = "Certified upper bounds on time-windowed mean and ES risk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve (or export) the relaxations for a range of orders.
    Bound(BoundArgs),
    /// Sample trajectories and write windowed-statistic traces.
    Sample(SampleArgs),
    /// Solve, sample and cross-check bounds against the samples.
    Validate(ValidateArgs),
    /// Read an SDPA solution produced by an external solver.
    Import(ImportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RiskArg {
    Mean,
    Es,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Embedded,
    ExportOnly,
}

#[derive(Args)]
struct ProblemArgs {
    /// Problem file, or the name of a bundled problem.
    #[arg(long)]
    problem: String,
    /// Override the risk kind of the problem file.
    #[arg(long, value_enum)]
    risk: Option<RiskArg>,
    /// ES level; implies `--risk es` when given alone.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OrderArgs {
    /// Relaxation order `K` or inclusive range `A..B`.
    #[arg(long, default_value = "1..3")]
    k: String,
    #[arg(long, value_enum, default_value = "embedded")]
    solver: SolverArg,
    /// Gap and feasibility tolerance of the embedded solver.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 5e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct BoundArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    order: OrderArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    order: OrderArgs,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Args)]
struct ImportArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Order of the exported relaxation the solution belongs to.
    #[arg(long)]
    k: u32,
    /// Solution file (see the README for the layout).
    #[arg(long)]
    solution: PathBuf,
    /// Feasibility tolerance used to re-assess the imported point.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type Outcome = Result<(), Failure>;

fn parse_orders(text: &str) -> Result<Vec<u32>, Failure> {
    let bad = || fail(exit::USAGE, format!("--k expects `K` or `A..B` with 1 <= A <= B, got `{text}`"));
    let (a, b) = match text.split_once("..") {
        Some((a, b)) => (a.trim().parse::<u32>().map_err(|_| bad())?, b.trim().parse::<u32>().map_err(|_| bad())?),
        None => {
            let k = text.trim().parse::<u32>().map_err(|_| bad())?;
            (k, k)
        }
    };
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn load(args: &ProblemArgs) -> Result<RiskProblem, Failure> {
    let mut p = match bundled(&args.problem) {
        Some(text) => parse_problem(text, &args.problem),
        None => {
            let text =
                std::fs::read_to_string(&args.problem).map_err(|e| fail(exit::IO, format!("{}: {e}", args.problem)))?;
            parse_problem(&text, &args.problem)
        }
    }
    .map_err(|e| fail(exit::PARSE, e.to_string()))?;
    match (args.risk, args.epsilon) {
        (Some(RiskArg::Mean), Some(_)) => return Err(fail(exit::USAGE, "--epsilon only applies to --risk es")),
        (Some(RiskArg::Mean), None) => p.risk = RiskKind::Mean,
        (Some(RiskArg::Es), None) => {
            if p.epsilon().is_none() {
                return Err(fail(exit::USAGE, "--risk es needs --epsilon"));
            }
        }
        (Some(RiskArg::Es), Some(e)) | (None, Some(e)) => p.risk = RiskKind::Es { epsilon: e },
        (None, None) => {}
    }
    if let Some(e) = p.epsilon() {
        if !(e > 0.0 && e < 1.0) {
            return Err(fail(exit::USAGE, format!("epsilon must lie in (0, 1), got {e}")));
        }
    }
    let diags = p.validate();
    for d in &diags {
        eprintln!("{:?}: {}", d.severity, d.message);
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(fail(exit::INVALID_PROBLEM, "problem failed validation"));
    }
    Ok(p)
}

fn solver_options(order: &OrderArgs) -> Result<SolverOptions, Failure> {
    let mut opts = SolverOptions::default();
    if let Some(t) = order.tol {
        if !(t > 0.0) {
            return Err(fail(exit::USAGE, "--tol must be positive"));
        }
        opts.gap_tol = t;
        opts.feas_tol = t;
    }
    Ok(opts)
}

fn sample_options(mc: &McArgs) -> Result<SampleOptions, Failure> {
    if mc.paths == 0 {
        return Err(fail(exit::USAGE, "--paths must be positive"));
    }
    if !(mc.dt > 0.0) {
        return Err(fail(exit::USAGE, "--dt must be positive"));
    }
    Ok(SampleOptions { count: mc.paths, dt: mc.dt, seed: mc.seed, ..SampleOptions::default() })
}

fn out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| fail(exit::IO, format!("{}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| fail(exit::IO, format!("{}: {e}", path.display())))
}

fn risk_label(p: &RiskProblem) -> String {
    match p.risk {
        RiskKind::Mean => "mean".into(),
        RiskKind::Es { epsilon } => format!("es{epsilon}"),
    }
}

fn stem(p: &RiskProblem, k: u32) -> String {
    format!("{}_{}_k{k}", p.name, risk_label(p))
}

fn relaxation_context(rel: &MomentRelaxation) -> serde_json::Value {
    json!({ "relaxation": rel.meta })
}

fn cmd_bound(args: &BoundArgs) -> Outcome {
    let problem = load(&args.problem)?;
    let ks = parse_orders(&args.order.k)?;
    let opts = solver_options(&args.order)?;
    let dir = &args.problem.out;
    out_dir(dir)?;
    if args.order.solver == SolverArg::ExportOnly {
        for &k in &ks {
            let rel = build_relaxation(&problem, k).map_err(|e| fail(exit::INVALID_PROBLEM, e.to_string()))?;
            let path = dir.join(format!("{}.dat-s", stem(&problem, k)));
            sdpa::export_sdpa(&rel.to_conic(), &path, relaxation_context(&rel))
                .map_err(|e| fail(exit::IO, e.to_string()))?;
            println!("k = {k}: wrote {}", path.display());
        }
        return Ok(());
    }
    let mut table = format!(
        "problem {}  risk {}\n k  status        bound       moment value  mass  time (s)\n",
        problem.name,
        risk_label(&problem)
    );
    let mut rows = Vec::new();
    let mut failed = false;
    for &k in &ks {
        let res = match certify::solve_bound(&problem, k, &opts) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("k = {k}: {e}");
                failed = true;
                table.push_str(&format!("{k:2}  error         -           -             -     -\n"));
                rows.push(json!({ "k": k, "error": e.to_string() }));
                continue;
            }
        };
        let mass = certify::check_mass_invariants(&res.relaxation, &res.solution.y, 1e-6);
        let optimizers = certify::extract_optimizers(&res.relaxation, &res.solution.y, 1e-3);
        let mass_ok = mass.iter().all(|m| m.pass);
        failed |= !res.solution.status.is_success();
        table.push_str(&format!(
            "{k:2}  {:<12}  {:<10.6}  {:<12.6}  {:<4}  {:.2}\n",
            format!("{:?}", res.solution.status),
            res.bound,
            res.moment_value,
            if mass_ok { "ok" } else { "FAIL" },
            res.seconds
        ));
        if optimizers.x0_star.is_some() || optimizers.xp_star.is_some() {
            table.push_str(&format!(
                "    x0* {:?}  t* {:?}  xp* {:?}\n",
                optimizers.x0_star, optimizers.t_star, optimizers.xp_star
            ));
        }
        rows.push(json!({
            "k": k,
            "status": res.solution.status,
            "bound": res.bound,
            "moment_value": res.moment_value,
            "residuals": res.solution.residuals,
            "iterations": res.solution.iterations,
            "message": res.solution.message,
            "mass_checks": mass,
            "optimizers": optimizers,
            "seconds": res.seconds,
        }));
    }
    print!("{table}");
    let base = format!("{}_{}", problem.name, risk_label(&problem));
    write(&dir.join(format!("{base}_bounds.txt")), &table)?;
    let doc = json!({ "problem": problem.name, "risk": problem.risk, "bounds": rows });
    write(&dir.join(format!("{base}_bounds.json")), &serde_json::to_string_pretty(&doc).expect("serializable"))?;
    if failed {
        return Err(fail(exit::SOLVER, "at least one relaxation did not solve"));
    }
    Ok(())
}

fn cmd_sample(args: &SampleArgs) -> Outcome {
    let problem = load(&args.problem)?;
    let opts = sample_options(&args.mc)?;
    let dir = &args.problem.out;
    out_dir(dir)?;
    let batch = montecarlo::simulate(&problem, &opts).map_err(|e| fail(exit::USAGE, e.to_string()))?;
    let header = format!(
        "problem {} paths {} dt {} seed {} window {}",
        problem.name, opts.count, batch.dt, opts.seed, problem.window
    );
    let io = |e: montecarlo::SampleError| fail(exit::IO, e.to_string());
    montecarlo::write_traces_csv(
        &batch,
        &problem.states,
        &problem.cost,
        &header,
        &dir.join(format!("{}_traces.csv", problem.name)),
    )
    .map_err(io)?;
    let mean = montecarlo::windowed_mean_series(&batch, &problem.cost, problem.window)
        .map_err(|e| fail(exit::USAGE, e.to_string()))?;
    montecarlo::write_series_csv(
        &mean,
        &format!("{header} statistic mean"),
        &dir.join(format!("{}_mean.csv", problem.name)),
    )
    .map_err(io)?;
    println!("windowed mean: per-path sup {:.6}, cross-path mean sup {:.6}", mean.sup(), finite_max(&mean.cross_mean));
    if let Some(eps) = problem.epsilon() {
        let es = montecarlo::windowed_es_series(&batch, &problem.cost, problem.window, eps)
            .map_err(|e| fail(exit::USAGE, e.to_string()))?;
        montecarlo::write_series_csv(
            &es,
            &format!("{header} statistic es epsilon {eps}"),
            &dir.join(format!("{}_es.csv", problem.name)),
        )
        .map_err(io)?;
        println!("windowed ES({eps}): per-path sup {:.6}, pooled sup {:.6}", es.sup(), finite_max(&es.pooled));
    }
    println!("exit fraction {:.3}", batch.exit_fraction());
    let summary = certify::empirical_summary(&problem, &batch).map_err(|e| fail(exit::USAGE, e.to_string()))?;
    write(
        &dir.join(format!("{}_summary.json", problem.name)),
        &serde_json::to_string_pretty(&summary).expect("serializable"),
    )?;
    Ok(())
}

fn finite_max(v: &[f64]) -> f64 {
    v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max)
}

fn cmd_validate(args: &ValidateArgs) -> Outcome {
    let problem = load(&args.problem)?;
    let ks = parse_orders(&args.order.k)?;
    if args.order.solver == SolverArg::ExportOnly {
        return Err(fail(exit::USAGE, "validate needs the embedded solver"));
    }
    let opts = ValidateOptions {
        solver: solver_options(&args.order)?,
        sample: sample_options(&args.mc)?,
        ..ValidateOptions::default()
    };
    let dir = &args.problem.out;
    out_dir(dir)?;
    let report = certify::validate(&problem, &ks, &opts).map_err(|e| fail(exit::SOLVER, e.to_string()))?;
    let text = report.to_text();
    print!("{text}");
    let base = format!("{}_{}_validate", problem.name, risk_label(&problem));
    write(&dir.join(format!("{base}.txt")), &text)?;
    write(&dir.join(format!("{base}.json")), &serde_json::to_string_pretty(&report).expect("serializable"))?;
    if report.has_failures() {
        return Err(fail(exit::CERTIFICATION, "a bound failed validation"));
    }
    Ok(())
}

fn cmd_import(args: &ImportArgs) -> Outcome {
    let problem = load(&args.problem)?;
    if args.k == 0 {
        return Err(fail(exit::USAGE, "--k must be at least 1"));
    }
    let rel = build_relaxation(&problem, args.k).map_err(|e| fail(exit::INVALID_PROBLEM, e.to_string()))?;
    let prog = rel.to_conic();
    let sol = sdpa::import_sdpa_solution(&args.solution, &prog, args.tol).map_err(|e| match e {
        conic::ConicError::Io { .. } => fail(exit::IO, e.to_string()),
        _ => fail(exit::PARSE, e.to_string()),
    })?;
    let mass = certify::check_mass_invariants(&rel, &sol.y, 1e-6);
    let mass_ok = mass.iter().all(|m| m.pass);
    println!(
        "k = {}: status {:?}, bound {:.6}, moment value {:.6}, mass invariants {}",
        args.k,
        sol.status,
        rel.report_value(sol.bound()),
        rel.report_value(sol.value),
        if mass_ok { "ok" } else { "FAIL" }
    );
    if !sol.status.is_success() || !mass_ok {
        return Err(fail(exit::SOLVER, "imported solution does not certify a bound"));
    }
    Ok(())
}

fn threads() -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| fail(exit::USAGE, format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Outcome {
        let n = threads()?;
        winrisk::par::with_threads(n, || match &cli.command {
            Command::Bound(a) => cmd_bound(a),
            Command::Sample(a) => cmd_sample(a),
            Command::Validate(a) => cmd_validate(a),
            Command::Import(a) => cmd_import(a),
        })
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
