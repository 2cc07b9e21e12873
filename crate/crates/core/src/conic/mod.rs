//! Conic programs: representation, an embedded primal-dual interior-point
//! solver, and SDPA sparse-format export and import.

mod ipm;
mod presolve;
mod program;
pub mod sdpa;

use serde::{Deserialize, Serialize};

pub use ipm::solve;
pub use presolve::{presolve, Presolved};
pub use program::{ConicProgram, PsdBlock, SymEntry};

#[derive(Debug, thiserror::Error)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("program too large for the embedded solver ({0}); export it with `--solver export-only` and use an external SDP solver")]
    TooLarge(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("solution does not match the program: {0}")]
    Mismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    /// Whether the returned point is usable as a bound.
    pub fn is_success(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative duality gap target.
    pub gap_tol: f64,
    /// Relative primal/dual infeasibility target.
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Largest PSD block the embedded solver accepts.
    pub max_block: usize,
    /// Largest number of scalar variables the embedded solver accepts.
    pub max_vars: usize,
    pub parallel: bool,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            gap_tol: 1e-7,
            feas_tol: 1e-7,
            max_iter: 120,
            max_block: 300,
            max_vars: 20_000,
            parallel: crate::par::available(),
            verbose: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `max |A y - b|`.
    pub primal_equality: f64,
    /// Smallest eigenvalue over all blocks of `F(y)`.
    pub min_eigenvalue: f64,
    /// Relative gap between the moment value and the dual bound.
    pub duality_gap: f64,
    /// Relative infeasibility of the dual multipliers.
    pub dual_infeasibility: f64,
}

/// Multipliers: one per equality row and one PSD matrix per block
/// (row-major, full).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    pub equalities: Vec<f64>,
    pub blocks: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub step_primal: f64,
    pub step_dual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub y: Vec<f64>,
    /// `c . y`.
    pub value: f64,
    /// Value of the dual (upper) bound when multipliers are available.
    pub dual_value: Option<f64>,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub duals: Option<Duals>,
    pub iterations: usize,
    pub trace: Vec<IterationLog>,
    pub message: String,
}

impl ConicSolution {
    /// The safer of the two values for an upper bound: the dual bound when
    /// available, else the moment value.
    pub fn bound(&self) -> f64 {
        match self.dual_value {
            Some(d) if d.is_finite() => d.max(self.value),
            _ => self.value,
        }
    }
}

/// Recomputes residuals and status for an externally supplied point, using
/// the thresholds `feas_tol` (Optimal) and `1e-2` (NearOptimal).
pub fn assess_point(prog: &ConicProgram, y: Vec<f64>, duals: Option<Duals>, feas_tol: f64) -> ConicSolution {
    let eq = prog.equality_residual(&y);
    let min_eig = prog.block_min_eigenvalues(&y).into_iter().fold(f64::INFINITY, f64::min);
    let min_eig = if min_eig.is_finite() { min_eig } else { 0.0 };
    let value = prog.objective_value(&y);
    let (dual_value, dual_inf) = match &duals {
        Some(d) => {
            let (dv, inf) = dual_objective(prog, d);
            (Some(dv), inf)
        }
        None => (None, 0.0),
    };
    let gap = dual_value.map(|d| (d - value).abs() / (1.0 + d.abs() + value.abs())).unwrap_or(0.0);
    let worst = eq.max(-min_eig).max(dual_inf);
    let status = if !worst.is_finite() {
        SolveStatus::NumericalFailure
    } else if worst <= feas_tol {
        SolveStatus::Optimal
    } else if worst <= 1e-2 {
        SolveStatus::NearOptimal
    } else {
        SolveStatus::NumericalFailure
    };
    ConicSolution {
        y,
        value,
        dual_value,
        status,
        residuals: Residuals {
            primal_equality: eq,
            min_eigenvalue: min_eig,
            duality_gap: gap,
            dual_infeasibility: dual_inf,
        },
        duals,
        iterations: 0,
        trace: Vec::new(),
        message: "residuals recomputed from an imported point".into(),
    }
}

/// Dual objective `b . lambda + <F0, X>` and the relative stationarity
/// residual `|c + F*(X) - A^T lambda|`.
pub fn dual_objective(prog: &ConicProgram, d: &Duals) -> (f64, f64) {
    let mut g: Vec<f64> = vec![0.0; prog.nvars];
    for &(i, c) in &prog.objective {
        g[i] += c;
    }
    let mut value: f64 = prog.eq_rhs.iter().zip(&d.equalities).map(|(b, l)| b * l).sum();
    for (b, x) in prog.blocks.iter().zip(&d.blocks) {
        let n = b.size;
        let pair = |e: &SymEntry| if e.row == e.col { x[e.row * n + e.col] } else { 2.0 * x[e.row * n + e.col] };
        for e in &b.constant {
            value += e.value * pair(e);
        }
        for (i, e) in &b.coefficients {
            g[*i] += e.value * pair(e);
        }
    }
    for (r, l) in prog.eq_rows.iter().zip(&d.equalities) {
        for &(i, a) in r {
            g[i] -= a * l;
        }
    }
    let scale = 1.0 + prog.objective.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
    (value, g.iter().map(|v| v.abs()).fold(0.0, f64::max) / scale)
}
