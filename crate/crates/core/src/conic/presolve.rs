use super::ConicProgram;

/// Result of eliminating the equality constraints.
///
/// Every feasible `y` is `y_B = rhs - R y_N` for the basic variables `B`
/// (one per independent row) and free nonbasic variables `N`.
#[derive(Clone, Debug)]
pub struct Presolved {
    pub basics: Vec<usize>,
    pub nonbasics: Vec<usize>,
    /// `basics.len() x nonbasics.len()`, row-major.
    pub r: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Original row indices dropped as redundant.
    pub dropped: Vec<usize>,
}

impl Presolved {
    pub fn num_free(&self) -> usize {
        self.nonbasics.len()
    }

    /// `y = y_p + Z w` for nonbasic coordinates `w`.
    pub fn expand(&self, w: &[f64], nvars: usize) -> Vec<f64> {
        let mut y = vec![0.0; nvars];
        let nn = self.nonbasics.len();
        for (j, &v) in self.nonbasics.iter().enumerate() {
            y[v] = w[j];
        }
        for (r, &b) in self.basics.iter().enumerate() {
            let row = &self.r[r * nn..(r + 1) * nn];
            y[b] = self.rhs[r] - row.iter().zip(w).map(|(a, x)| a * x).sum::<f64>();
        }
        y
    }

    /// `Z^T v = v_N - R^T v_B`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let nn = self.nonbasics.len();
        let mut out: Vec<f64> = self.nonbasics.iter().map(|&i| v[i]).collect();
        for (r, &b) in self.basics.iter().enumerate() {
            let vb = v[b];
            if vb != 0.0 {
                for (o, a) in out.iter_mut().zip(&self.r[r * nn..(r + 1) * nn]) {
                    *o -= a * vb;
                }
            }
        }
        out
    }

    /// `Z w` (the homogeneous part of [`expand`](Self::expand)).
    pub fn lift(&self, w: &[f64], nvars: usize) -> Vec<f64> {
        let nn = self.nonbasics.len();
        let mut y = vec![0.0; nvars];
        for (j, &v) in self.nonbasics.iter().enumerate() {
            y[v] = w[j];
        }
        for (r, &b) in self.basics.iter().enumerate() {
            y[b] = -self.r[r * nn..(r + 1) * nn].iter().zip(w).map(|(a, x)| a * x).sum::<f64>();
        }
        y
    }
}

/// Gauss-Jordan elimination of `A y = b`. Each row pivots on its largest
/// remaining entry; rows that vanish are dropped when their right-hand side
/// vanishes too and reported as inconsistent otherwise (`Err(row)`).
pub fn presolve(prog: &ConicProgram) -> Result<Presolved, usize> {
    let m = prog.num_equalities();
    let n = prog.nvars;
    let mut a = vec![0.0; m * n];
    let mut b = prog.eq_rhs.clone();
    let mut scale = vec![0.0f64; m];
    for (r, row) in prog.eq_rows.iter().enumerate() {
        for &(i, v) in row {
            a[r * n + i] = v;
            scale[r] = scale[r].max(v.abs());
        }
    }
    let bscale = 1.0 + b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut dropped = Vec::new();
    let mut is_basic = vec![false; n];
    for r in 0..m {
        let row = &a[r * n..(r + 1) * n];
        let (p, big) = row
            .iter()
            .enumerate()
            .filter(|(i, _)| !is_basic[*i])
            .fold((usize::MAX, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if p == usize::MAX || big <= 1e-11 * scale[r].max(1e-300) {
            if b[r].abs() > 1e-8 * bscale {
                return Err(r);
            }
            dropped.push(r);
            continue;
        }
        let inv = 1.0 / a[r * n + p];
        for v in &mut a[r * n..(r + 1) * n] {
            *v *= inv;
        }
        b[r] *= inv;
        a[r * n + p] = 1.0;
        let (head, tail) = a.split_at_mut(r * n);
        let (prow, rest) = tail.split_at_mut(n);
        let nz: Vec<(usize, f64)> = prow.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect();
        let mut elim = |o: usize, orow: &mut [f64]| {
            let f = orow[p];
            if f != 0.0 {
                for &(i, v) in &nz {
                    orow[i] -= f * v;
                }
                orow[p] = 0.0;
                b[o] -= f * b[r];
            }
        };
        for (o, orow) in head.chunks_mut(n).enumerate() {
            elim(o, orow);
        }
        for (o, orow) in rest.chunks_mut(n).enumerate() {
            elim(r + 1 + o, orow);
        }
        is_basic[p] = true;
        pivots.push((r, p));
    }
    let nonbasics: Vec<usize> = (0..n).filter(|&i| !is_basic[i]).collect();
    let nn = nonbasics.len();
    let mut rmat = vec![0.0; pivots.len() * nn];
    let mut rhs = Vec::with_capacity(pivots.len());
    let mut basics = Vec::with_capacity(pivots.len());
    for (k, &(r, p)) in pivots.iter().enumerate() {
        for (j, &v) in nonbasics.iter().enumerate() {
            rmat[k * nn + j] = a[r * n + v];
        }
        rhs.push(b[r]);
        basics.push(p);
    }
    Ok(Presolved { basics, nonbasics, r: rmat, rhs, dropped })
}
