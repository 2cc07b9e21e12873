//! Infeasible-start primal-dual interior-point method (HKM direction with
//! Mehrotra predictor-corrector) for
//!
//! ```text
//! maximize c . y   s.t.   A y = b,   F(y) = F0 + sum_i y_i F_i >= 0.
//! ```
//!
//! The equalities are eliminated first (`y = y_p + Z w`), which turns the
//! problem into the standard dual form `max b_w . w  s.t.  C - sum_j w_j A_j = S >= 0`
//! with `C = F(y_p)` and `A_j = -sum_i Z_ij F_i`; its primal is
//! `min <C, X>  s.t.  <A_j, X> = b_w_j,  X >= 0`, and `c . y_p + <C, X>` is the
//! upper bound certified by a primal-feasible `X`.
//!
//! The Schur complement `M_w = Z^T M_y Z` is formed from
//! `M_y[i, l] = tr(F_i X F_l S^-1)`, which is block diagonal over groups of
//! variables that share PSD blocks.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, Par, Side};

use super::{
    presolve, ConicError, ConicProgram, ConicSolution, Duals, IterationLog, Residuals, SolveStatus, SolverOptions,
};
use crate::par;

struct Block {
    n: usize,
    /// Full (both triangles) entries of each coefficient matrix, keyed by
    /// variable.
    by_var: Vec<(usize, Vec<(usize, usize, f64)>)>,
    /// CSR over matrix positions `r * n + c`: `(variable, value)` pairs.
    pos_start: Vec<usize>,
    pos_items: Vec<(usize, f64)>,
    group: usize,
}

struct Group {
    vars: Vec<usize>,
}

struct Workspace<'a> {
    prog: &'a ConicProgram,
    pre: presolve::Presolved,
    blocks: Vec<Block>,
    groups: Vec<Group>,
    local: Vec<usize>,
    basic_row: Vec<Option<usize>>,
    nonbasic_col: Vec<Option<usize>>,
    r_mat: Mat<f64>,
    parallel: bool,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl<'a> Workspace<'a> {
    fn new(prog: &'a ConicProgram, pre: presolve::Presolved, parallel: bool) -> Self {
        let nv = prog.nvars;
        let mut parent: Vec<usize> = (0..nv).collect();
        for b in &prog.blocks {
            if let Some(&(first, _)) = b.coefficients.first() {
                for (i, _) in &b.coefficients {
                    let (ra, rb) = (find(&mut parent, first), find(&mut parent, *i));
                    parent[ra] = rb;
                }
            }
        }
        let mut root_group = vec![usize::MAX; nv];
        let mut groups: Vec<Group> = Vec::new();
        let mut local = vec![0; nv];
        for v in 0..nv {
            let r = find(&mut parent, v);
            if root_group[r] == usize::MAX {
                root_group[r] = groups.len();
                groups.push(Group { vars: Vec::new() });
            }
            let g = root_group[r];
            local[v] = groups[g].vars.len();
            groups[g].vars.push(v);
        }
        let blocks = prog
            .blocks
            .iter()
            .map(|b| {
                let n = b.size;
                let mut by_var: Vec<(usize, Vec<(usize, usize, f64)>)> = Vec::new();
                let mut counts = vec![0usize; n * n + 1];
                for (i, e) in &b.coefficients {
                    if by_var.last().map(|l| l.0) != Some(*i) {
                        by_var.push((*i, Vec::new()));
                    }
                    let list = &mut by_var.last_mut().expect("pushed").1;
                    list.push((e.row, e.col, e.value));
                    counts[e.row * n + e.col] += 1;
                    if e.row != e.col {
                        list.push((e.col, e.row, e.value));
                        counts[e.col * n + e.row] += 1;
                    }
                }
                let mut pos_start = vec![0usize; n * n + 1];
                for p in 0..n * n {
                    pos_start[p + 1] = pos_start[p] + counts[p];
                }
                let mut fill = pos_start.clone();
                let mut pos_items = vec![(0usize, 0.0f64); pos_start[n * n]];
                for (i, list) in &by_var {
                    for &(r, c, f) in list {
                        let p = r * n + c;
                        pos_items[fill[p]] = (local[*i], f);
                        fill[p] += 1;
                    }
                }
                let group = b.coefficients.first().map(|(i, _)| root_group[find(&mut parent, *i)]).unwrap_or(0);
                Block { n, by_var, pos_start, pos_items, group }
            })
            .collect();
        let mut basic_row = vec![None; nv];
        let mut nonbasic_col = vec![None; nv];
        for (r, &b) in pre.basics.iter().enumerate() {
            basic_row[b] = Some(r);
        }
        for (c, &v) in pre.nonbasics.iter().enumerate() {
            nonbasic_col[v] = Some(c);
        }
        let nn = pre.nonbasics.len();
        let r_mat = Mat::from_fn(pre.basics.len(), nn, |i, j| pre.r[i * nn + j]);
        Workspace { prog, pre, blocks, groups, local, basic_row, nonbasic_col, r_mat, parallel }
    }

    fn nfree(&self) -> usize {
        self.pre.nonbasics.len()
    }

    /// Per-block `F0 + sum_i y_i F_i` (or the linear part only).
    fn fmap(&self, y: &[f64], with_constant: bool) -> Vec<Mat<f64>> {
        self.prog
            .blocks
            .iter()
            .map(|b| {
                let n = b.size;
                let mut m = Mat::<f64>::zeros(n, n);
                if with_constant {
                    for e in &b.constant {
                        m[(e.row, e.col)] += e.value;
                    }
                }
                for (i, e) in &b.coefficients {
                    m[(e.row, e.col)] += y[*i] * e.value;
                }
                for r in 0..n {
                    for c in r + 1..n {
                        m[(c, r)] = m[(r, c)];
                    }
                }
                m
            })
            .collect()
    }

    /// `F*(W)_i = sum_blocks <F_i, W>` for (possibly nonsymmetric) `W`.
    fn fstar(&self, w: &[Mat<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.prog.nvars];
        for (b, m) in self.prog.blocks.iter().zip(w) {
            for (i, e) in &b.coefficients {
                out[*i] += if e.row == e.col {
                    e.value * m[(e.row, e.row)]
                } else {
                    e.value * (m[(e.row, e.col)] + m[(e.col, e.row)])
                };
            }
        }
        out
    }

    /// `A(W) = -Z^T F*(W)`.
    fn a_op(&self, w: &[Mat<f64>]) -> Vec<f64> {
        self.pre.project(&self.fstar(w)).into_iter().map(|v| -v).collect()
    }

    /// `A^T dw = -F_lin(Z dw)`.
    fn at_op(&self, dw: &[f64]) -> Vec<Mat<f64>> {
        let y = self.pre.lift(dw, self.prog.nvars);
        self.fmap(&y, false).into_iter().map(|m| -m).collect()
    }

    fn schur(&self, xs: &[Mat<f64>], sinvs: &[Mat<f64>]) -> Mat<f64> {
        let nn = self.nfree();
        let mut groups: Vec<Vec<f64>> = self.groups.iter().map(|g| vec![0.0; g.vars.len() * g.vars.len()]).collect();
        for (bi, blk) in self.blocks.iter().enumerate() {
            let g = blk.group;
            let len = self.groups[g].vars.len();
            let n = blk.n;
            let mut row_entry = vec![usize::MAX; len];
            for (k, (v, _)) in blk.by_var.iter().enumerate() {
                row_entry[self.local[*v]] = k;
            }
            let (x, si) = (&xs[bi], &sinvs[bi]);
            par::for_each_chunk_mut(&mut groups[g], len, self.parallel, |row, out| {
                let k = row_entry[row];
                if k == usize::MAX {
                    return;
                }
                let list = &blk.by_var[k].1;
                let a = Mat::<f64>::from_fn(n, list.len(), |r, j| si[(r, list[j].0)] * list[j].2);
                let b = Mat::<f64>::from_fn(list.len(), n, |j, c| x[(list[j].1, c)]);
                let mut v = Mat::<f64>::zeros(n, n);
                matmul(v.as_mut(), Accum::Replace, a.as_ref(), b.as_ref(), 1.0, Par::Seq);
                // M[i, l] += f * V[c, r] for (r, c, f) in F_l
                for r in 0..n {
                    let col = v.col_as_slice(r);
                    for (c, &val) in col.iter().enumerate() {
                        let p = r * n + c;
                        for &(l, f) in &blk.pos_items[blk.pos_start[p]..blk.pos_start[p + 1]] {
                            out[l] += f * val;
                        }
                    }
                }
            });
        }
        let mut mz = Mat::<f64>::zeros(nn, nn);
        let mut tmp = Mat::<f64>::zeros(nn, nn);
        let fpar = par::faer_par(self.parallel);
        for (g, grp) in self.groups.iter().enumerate() {
            let len = grp.vars.len();
            let mg = &groups[g];
            let bs: Vec<(usize, usize)> =
                (0..len).filter_map(|j| self.basic_row[grp.vars[j]].map(|r| (j, r))).collect();
            let ns: Vec<(usize, usize)> =
                (0..len).filter_map(|j| self.nonbasic_col[grp.vars[j]].map(|c| (j, c))).collect();
            for &(j, cj) in &ns {
                for &(l, cl) in &ns {
                    mz[(cj, cl)] += mg[j * len + l];
                }
            }
            if bs.is_empty() {
                continue;
            }
            let rg = Mat::<f64>::from_fn(bs.len(), nn, |i, c| self.r_mat[(bs[i].1, c)]);
            let mbb = Mat::<f64>::from_fn(bs.len(), bs.len(), |i, j| mg[bs[i].0 * len + bs[j].0]);
            let mut q = Mat::<f64>::zeros(bs.len(), nn);
            matmul(q.as_mut(), Accum::Replace, mbb.as_ref(), rg.as_ref(), -0.5, fpar);
            for (i, &(j, _)) in bs.iter().enumerate() {
                for &(l, cl) in &ns {
                    q[(i, cl)] += mg[j * len + l];
                }
            }
            matmul(tmp.as_mut(), Accum::Replace, rg.transpose(), q.as_ref(), 1.0, fpar);
            for c in 0..nn {
                for r in 0..nn {
                    mz[(r, c)] -= tmp[(r, c)] + tmp[(c, r)];
                }
            }
        }
        mz
    }
}

fn inner(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for c in 0..a.ncols() {
        for (x, y) in a.col_as_slice(c).iter().zip(b.col_as_slice(c)) {
            s += x * y;
        }
    }
    s
}

fn fro(a: &Mat<f64>) -> f64 {
    inner(a, a).sqrt()
}

fn sym(a: Mat<f64>) -> Mat<f64> {
    let n = a.nrows();
    Mat::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest `alpha` with `X + alpha dX >= 0` (capped at a large value).
fn max_step(x: &Mat<f64>, dx: &Mat<f64>) -> Option<f64> {
    let llt = x.llt(Side::Lower).ok()?;
    let l = llt.L();
    let mut t = dx.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, t.as_mut(), Par::Seq);
    let mut u = t.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, u.as_mut(), Par::Seq);
    let u = sym(u);
    let eig = u.self_adjoint_eigenvalues(Side::Lower).ok()?;
    let lmin = eig.into_iter().fold(f64::INFINITY, f64::min);
    Some(if lmin < 0.0 { -1.0 / lmin } else { 1e6 })
}

struct NtScaling {
    g: Mat<f64>,
    ginv: Mat<f64>,
    d: Vec<f64>,
    w: Mat<f64>,
}

/// `G` with `G^-1 X G^-T = G^T S G = diag(d)`; `W = G G^T`.
fn nt_scaling(x: &Mat<f64>, s: &Mat<f64>) -> Option<NtScaling> {
    let n = x.nrows();
    let lx = x.llt(Side::Lower).ok()?.L().to_owned();
    let ls = s.llt(Side::Lower).ok()?.L().to_owned();
    let svd = (ls.transpose() * &lx).svd().ok()?;
    let sv = svd.S().column_vector();
    let d: Vec<f64> = (0..n).map(|i| sv[i]).collect();
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let q = svd.V();
    let g = Mat::<f64>::from_fn(n, n, |r, c| (&lx * q)[(r, c)] / d[c].sqrt());
    let mut lxinv = Mat::<f64>::identity(n, n);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(lx.as_ref(), lxinv.as_mut(), Par::Seq);
    let qt_lxinv = q.transpose() * &lxinv;
    let ginv = Mat::<f64>::from_fn(n, n, |r, c| d[r].sqrt() * qt_lxinv[(r, c)]);
    let w = sym(&g * g.transpose());
    Some(NtScaling { g, ginv, d, w })
}

fn min_step(xs: &[Mat<f64>], dxs: &[Mat<f64>]) -> Option<f64> {
    let mut a = 1e6f64;
    for (x, d) in xs.iter().zip(dxs) {
        a = a.min(max_step(x, d)?);
    }
    Some(a)
}

fn factor_schur(m: &Mat<f64>) -> Option<faer::linalg::solvers::Llt<f64>> {
    if let Ok(f) = m.llt(Side::Lower) {
        return Some(f);
    }
    let n = m.nrows();
    let dmax = (0..n).map(|i| m[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
    for reg in [1e-14, 1e-12, 1e-10, 1e-8] {
        let mut r = m.clone();
        for i in 0..n {
            r[(i, i)] += reg * dmax;
        }
        if let Ok(f) = r.llt(Side::Lower) {
            return Some(f);
        }
    }
    None
}

fn failure(prog: &ConicProgram, status: SolveStatus, message: String) -> ConicSolution {
    ConicSolution {
        y: vec![0.0; prog.nvars],
        value: f64::NAN,
        dual_value: None,
        status,
        residuals: Residuals::default(),
        duals: None,
        iterations: 0,
        trace: Vec::new(),
        message,
    }
}

/// Solves `prog` with the embedded interior-point method.
pub fn solve(prog: &ConicProgram, opts: &SolverOptions) -> Result<ConicSolution, ConicError> {
    let biggest = prog.blocks.iter().map(|b| b.size).max().unwrap_or(0);
    if biggest > opts.max_block {
        return Err(ConicError::TooLarge(format!("PSD block of side {biggest} exceeds {}", opts.max_block)));
    }
    if prog.nvars > opts.max_vars {
        return Err(ConicError::TooLarge(format!("{} variables exceed {}", prog.nvars, opts.max_vars)));
    }
    let pre = match presolve::presolve(prog) {
        Ok(p) => p,
        Err(row) => {
            return Ok(failure(
                prog,
                SolveStatus::Infeasible,
                format!("equality row {row} is inconsistent with the others"),
            ))
        }
    };
    let ws = Workspace::new(prog, pre, opts.parallel);
    let nv = prog.nvars;
    let nfree = ws.nfree();
    let nb = prog.blocks.len();

    let y_p = ws.pre.expand(&vec![0.0; nfree], nv);
    let mut cfull = vec![0.0; nv];
    for &(i, c) in &prog.objective {
        cfull[i] = c;
    }
    let c_yp: f64 = prog.objective_value(&y_p);
    let b_w = ws.pre.project(&cfull);
    let cmat = ws.fmap(&y_p, true);
    let norm_b = norm2(&b_w);
    let norm_c = cmat.iter().map(|m| fro(m).powi(2)).sum::<f64>().sqrt();
    let total_n: usize = prog.blocks.iter().map(|b| b.size).sum();

    // coefficient scale per block, for the starting point
    let coef_norm: Vec<f64> = prog
        .blocks
        .iter()
        .map(|b| {
            let mut per_var = std::collections::BTreeMap::<usize, f64>::new();
            for (i, e) in &b.coefficients {
                let w = if e.row == e.col { 1.0 } else { 2.0 };
                *per_var.entry(*i).or_default() += w * e.value * e.value;
            }
            per_var.values().fold(0.0f64, |m, v| m.max(v.sqrt()))
        })
        .collect();
    let mut xs: Vec<Mat<f64>> = Vec::with_capacity(nb);
    let mut ss: Vec<Mat<f64>> = Vec::with_capacity(nb);
    for (j, b) in prog.blocks.iter().enumerate() {
        let n = b.size as f64;
        let xi =
            10f64.max(n.sqrt()).max(n * (1.0 + b_w.iter().fold(0.0f64, |m, v| m.max(v.abs()))) / (1.0 + coef_norm[j]));
        let eta = 10f64.max(n.sqrt()).max(coef_norm[j]).max(fro(&cmat[j]));
        xs.push(Mat::<f64>::identity(b.size, b.size) * faer::Scale(xi));
        ss.push(Mat::<f64>::identity(b.size, b.size) * faer::Scale(eta));
    }
    let mut w = vec![0.0; nfree];
    let mut trace: Vec<IterationLog> = Vec::new();
    let mut status = SolveStatus::NumericalFailure;
    let mut message = String::from("iteration limit reached");
    let (mut pobj, mut dobj) = (f64::NAN, f64::NAN);
    let (mut relgap, mut pinf, mut dinf) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut stalls = 0;
    let mut best_iter = 0;
    // best iterate so far, by the combined residual
    let mut best: Option<(f64, Vec<f64>, Vec<Mat<f64>>, f64, f64, f64, f64, f64)> = None;

    for iter in 0..=opts.max_iter {
        iterations = iter;
        let ax = ws.a_op(&xs);
        let rp: Vec<f64> = b_w.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let atw = ws.at_op(&w);
        let rd: Vec<Mat<f64>> = (0..nb).map(|j| &cmat[j] - &ss[j] - &atw[j]).collect();
        pobj = c_yp + (0..nb).map(|j| inner(&cmat[j], &xs[j])).sum::<f64>();
        dobj = c_yp + b_w.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        relgap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        pinf = norm2(&rp) / (1.0 + norm_b);
        dinf = rd.iter().map(|m| fro(m).powi(2)).sum::<f64>().sqrt() / (1.0 + norm_c);
        let mu = (0..nb).map(|j| inner(&xs[j], &ss[j])).sum::<f64>() / total_n.max(1) as f64;
        if !(pobj.is_finite() && dobj.is_finite() && mu.is_finite()) {
            message = "non-finite iterate".into();
            break;
        }
        let merit = relgap.max(pinf).max(dinf);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, w.clone(), xs.clone(), pobj, dobj, relgap, pinf, dinf));
            best_iter = iter;
        } else if iter >= best_iter + 8 {
            message = "no progress over the last iterations".into();
            break;
        }
        if opts.verbose {
            eprintln!(
                "{iter:3} pobj {pobj:+.8e} dobj {dobj:+.8e} gap {relgap:.1e} pinf {pinf:.1e} dinf {dinf:.1e} mu {mu:.1e} |X| {:.1e}",
                xs.iter().map(fro).fold(0.0, f64::max)
            );
        }
        if relgap <= opts.gap_tol && pinf <= opts.feas_tol && dinf <= opts.feas_tol {
            status = SolveStatus::Optimal;
            message = "converged".into();
            break;
        }
        let wn = norm2(&w);
        if wn > 1e12 && dobj > 1e10 && dinf < 1e-3 {
            status = SolveStatus::Unbounded;
            message = "moment objective diverges".into();
            break;
        }
        let xtr: f64 = xs.iter().map(|x| (0..x.nrows()).map(|i| x[(i, i)]).sum::<f64>()).sum();
        if xtr > 1e12 && pobj < -1e10 && pinf < 1e-3 {
            status = SolveStatus::Infeasible;
            message = "dual certificate of moment infeasibility".into();
            break;
        }
        if iter == opts.max_iter {
            break;
        }

        let mut scal = Vec::with_capacity(nb);
        for j in 0..nb {
            match nt_scaling(&xs[j], &ss[j]) {
                Some(v) => scal.push(v),
                None => break,
            }
        }
        if scal.len() < nb {
            message = "iterate lost definiteness".into();
            break;
        }
        let wmats: Vec<Mat<f64>> = scal.iter().map(|n| n.w.clone()).collect();
        let m = ws.schur(&wmats, &wmats);
        let Some(chol) = factor_schur(&m) else {
            message = "Schur complement is not positive definite".into();
            break;
        };
        // Direction for the scaled complementarity residual `rc` (one per block):
        // dX = G H G^T - W dS W with H_ij = 2 rc_ij / (d_i + d_j), dS = Rd - A^T dw.
        let solve_dir = |rc: &[Mat<f64>]| -> (Vec<f64>, Vec<Mat<f64>>, Vec<Mat<f64>>) {
            let t: Vec<Mat<f64>> = (0..nb)
                .map(|j| {
                    let d = &scal[j].d;
                    let h = Mat::<f64>::from_fn(d.len(), d.len(), |r, c| 2.0 * rc[j][(r, c)] / (d[r] + d[c]));
                    &scal[j].g * &h * scal[j].g.transpose()
                })
                .collect();
            let wrw: Vec<Mat<f64>> = (0..nb).map(|j| &wmats[j] * &rd[j] * &wmats[j]).collect();
            let a1 = ws.a_op(&t);
            let a2 = ws.a_op(&wrw);
            let rhs: Vec<f64> = (0..nfree).map(|i| rp[i] - a1[i] + a2[i]).collect();
            let mut dw = vec![0.0; nfree];
            let mut res = rhs.clone();
            // iterative refinement against the operator form of M
            for _ in 0..3 {
                let sol = chol.solve(&Mat::<f64>::from_fn(nfree, 1, |i, _| res[i]));
                for (d, i) in dw.iter_mut().zip(0..nfree) {
                    *d += sol[(i, 0)];
                }
                let at = ws.at_op(&dw);
                let waw: Vec<Mat<f64>> = (0..nb).map(|j| &wmats[j] * &at[j] * &wmats[j]).collect();
                let mdw = ws.a_op(&waw);
                res = rhs.iter().zip(&mdw).map(|(r, m)| r - m).collect();
                if norm2(&res) <= 1e-14 * (1.0 + norm2(&rhs)) {
                    break;
                }
            }
            let atdw = ws.at_op(&dw);
            let ds: Vec<Mat<f64>> = (0..nb).map(|j| &rd[j] - &atdw[j]).collect();
            let dx: Vec<Mat<f64>> = (0..nb).map(|j| sym(&t[j] - &wmats[j] * &ds[j] * &wmats[j])).collect();
            (dw, dx, ds)
        };
        let rc_pred: Vec<Mat<f64>> = scal
            .iter()
            .map(|n| Mat::<f64>::from_fn(n.d.len(), n.d.len(), |r, c| if r == c { -n.d[r] * n.d[r] } else { 0.0 }))
            .collect();
        let (_, dxa, dsa) = solve_dir(&rc_pred);
        let (Some(ap), Some(ad)) = (min_step(&xs, &dxa), min_step(&ss, &dsa)) else {
            message = "step length computation failed".into();
            break;
        };
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = (0..nb)
            .map(|j| inner(&(&xs[j] + &dxa[j] * faer::Scale(ap)), &(&ss[j] + &dsa[j] * faer::Scale(ad))))
            .sum::<f64>()
            / total_n.max(1) as f64;
        let expon = 1f64.max(3.0 * ap.min(ad).powi(2));
        let sigma = (mu_aff / mu).max(0.0).powf(expon).min(1.0);
        // corrector: rc = sigma mu I - D^2 - sym(dX~ dS~)
        let rc_corr: Vec<Mat<f64>> = (0..nb)
            .map(|j| {
                let n = &scal[j];
                let prod = &n.ginv * &dxa[j] * &dsa[j] * &n.g;
                let k = n.d.len();
                Mat::<f64>::from_fn(k, k, |r, c| {
                    let diag = if r == c { sigma * mu - n.d[r] * n.d[r] } else { 0.0 };
                    diag - 0.5 * (prod[(r, c)] + prod[(c, r)])
                })
            })
            .collect();
        let (dw, dx, ds) = solve_dir(&rc_corr);
        let (Some(ap_max), Some(ad_max)) = (min_step(&xs, &dx), min_step(&ss, &ds)) else {
            message = "step length computation failed".into();
            break;
        };
        let gamma = 0.9 + 0.09 * ap.min(ad);
        let ap = (gamma * ap_max).min(1.0);
        let ad = (gamma * ad_max).min(1.0);
        for j in 0..nb {
            xs[j] = &xs[j] + &dx[j] * faer::Scale(ap);
            ss[j] = &ss[j] + &ds[j] * faer::Scale(ad);
        }
        for (wi, d) in w.iter_mut().zip(&dw) {
            *wi += ad * d;
        }
        trace.push(IterationLog {
            iter,
            primal_value: dobj,
            dual_value: pobj,
            gap: relgap,
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
            step_primal: ap,
            step_dual: ad,
        });
        if ap.max(ad) < 1e-8 {
            stalls += 1;
            if stalls >= 3 {
                message = "step lengths stalled".into();
                break;
            }
        } else {
            stalls = 0;
        }
    }

    if status == SolveStatus::NumericalFailure {
        if let Some((_, bw, bx, bp, bd, bg, bpi, bdi)) = best {
            w = bw;
            xs = bx;
            pobj = bp;
            dobj = bd;
            relgap = bg;
            pinf = bpi;
            dinf = bdi;
        }
        let loose = 1e3;
        if relgap <= loose * opts.gap_tol.max(1e-9) && pinf <= loose * opts.feas_tol && dinf <= loose * opts.feas_tol {
            status = SolveStatus::NearOptimal;
            message =
                format!("{message}; returning the best iterate (gap {relgap:.1e}, pinf {pinf:.1e}, dinf {dinf:.1e})");
        }
    }
    if matches!(status, SolveStatus::Infeasible | SolveStatus::Unbounded) {
        let mut f = failure(prog, status, message);
        f.iterations = iterations;
        f.trace = trace;
        return Ok(f);
    }

    let y = ws.pre.expand(&w, nv);
    let duals = equality_multipliers(&ws, &xs, &cfull);
    let min_eig = prog.block_min_eigenvalues(&y).into_iter().fold(f64::INFINITY, f64::min);
    let dual_inf = duals.as_ref().map(|d| super::dual_objective(prog, d).1).unwrap_or(f64::NAN);
    Ok(ConicSolution {
        value: prog.objective_value(&y),
        dual_value: Some(pobj),
        status,
        residuals: Residuals {
            primal_equality: prog.equality_residual(&y),
            min_eigenvalue: if min_eig.is_finite() { min_eig } else { 0.0 },
            duality_gap: relgap,
            dual_infeasibility: dual_inf,
        },
        duals,
        y,
        iterations,
        trace,
        message: format!("{message} (moment value {dobj:.9}, dual bound {pobj:.9}, pinf {pinf:.1e}, dinf {dinf:.1e})"),
    })
}

/// Least-squares equality multipliers from `A^T lambda = c + F*(X)`.
fn equality_multipliers(ws: &Workspace<'_>, xs: &[Mat<f64>], cfull: &[f64]) -> Option<Duals> {
    let prog = ws.prog;
    let m = prog.num_equalities();
    let blocks: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| (0..x.nrows()).flat_map(|r| (0..x.ncols()).map(move |c| (r, c))).map(|(r, c)| x[(r, c)]).collect())
        .collect();
    if m == 0 {
        return Some(Duals { equalities: Vec::new(), blocks });
    }
    let mut g = ws.fstar(xs);
    for (gi, c) in g.iter_mut().zip(cfull) {
        *gi += c;
    }
    let keep: Vec<usize> = (0..m).filter(|r| !ws.pre.dropped.contains(r)).collect();
    let mk = keep.len();
    let mut gram = Mat::<f64>::zeros(mk, mk);
    let mut col_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); prog.nvars];
    for (k, &r) in keep.iter().enumerate() {
        for &(i, a) in &prog.eq_rows[r] {
            col_rows[i].push((k, a));
        }
    }
    for entries in &col_rows {
        for &(a, va) in entries {
            for &(b, vb) in entries {
                gram[(a, b)] += va * vb;
            }
        }
    }
    let rhs = Mat::<f64>::from_fn(mk, 1, |k, _| prog.eq_rows[keep[k]].iter().map(|&(i, a)| a * g[i]).sum());
    let chol = factor_schur(&gram)?;
    let sol = chol.solve(&rhs);
    let mut lambda = vec![0.0; m];
    for (k, &r) in keep.iter().enumerate() {
        lambda[r] = sol[(k, 0)];
    }
    Some(Duals { equalities: lambda, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{PsdBlock, SymEntry};

    fn e(row: usize, col: usize, value: f64) -> SymEntry {
        SymEntry { row, col, value }
    }

    /// max y1  s.t. y0 = 1, [[y0, y1], [y1, y2]] >= 0, y0 - y2 >= 0.
    pub(crate) fn toy() -> ConicProgram {
        let moment = PsdBlock::new(2, vec![], vec![(0, e(0, 0, 1.0)), (1, e(0, 1, 1.0)), (2, e(1, 1, 1.0))]);
        let guard = PsdBlock::new(1, vec![], vec![(0, e(0, 0, 1.0)), (2, e(0, 0, -1.0))]);
        ConicProgram::new(3, vec![(1, 1.0)], vec![(vec![(0, 1.0)], 1.0)], vec![moment, guard]).unwrap()
    }

    #[test]
    fn toy_reaches_the_box_edge() {
        let sol = solve(&toy(), &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "{}", sol.message);
        assert!((sol.value - 1.0).abs() < 1e-6, "{}", sol.value);
        assert!((sol.dual_value.unwrap() - 1.0).abs() < 1e-6);
        let d = sol.duals.unwrap();
        assert!((d.equalities[0] - 1.0).abs() < 1e-5, "{:?}", d.equalities);
    }

    #[test]
    fn oversize_programs_are_refused() {
        let opts = SolverOptions { max_block: 1, ..SolverOptions::default() };
        assert!(matches!(solve(&toy(), &opts), Err(ConicError::TooLarge(_))));
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = toy();
        p.eq_rows.push(vec![(0, 2.0)]);
        p.eq_rhs.push(3.0);
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }
}
