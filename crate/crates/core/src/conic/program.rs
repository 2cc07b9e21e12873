use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conic::ConicError;

/// One upper-triangle entry `(row <= col)` of a symmetric matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// `F0 + sum_i y_i F_i` restricted to one PSD block. Entries are stored
/// upper-triangle only and kept sorted: `constant` by `(row, col)` and
/// `coefficients` by `(var, row, col)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdBlock {
    pub size: usize,
    pub constant: Vec<SymEntry>,
    pub coefficients: Vec<(usize, SymEntry)>,
}

impl PsdBlock {
    pub fn new(size: usize, constant: Vec<SymEntry>, coefficients: Vec<(usize, SymEntry)>) -> Self {
        let mut b = PsdBlock { size, constant, coefficients };
        b.canonicalize();
        b
    }

    fn canonicalize(&mut self) {
        let flip = |e: SymEntry| if e.row <= e.col { e } else { SymEntry { row: e.col, col: e.row, value: e.value } };
        let mut c: Vec<SymEntry> = self.constant.drain(..).map(flip).collect();
        c.sort_by_key(|e| (e.row, e.col));
        self.constant = merge(c, |e| (e.row, e.col), |e| &mut e.value, |e| e.value);
        let mut v: Vec<(usize, SymEntry)> = self.coefficients.drain(..).map(|(i, e)| (i, flip(e))).collect();
        v.sort_by_key(|(i, e)| (*i, e.row, e.col));
        self.coefficients = merge(v, |(i, e)| (*i, e.row, e.col), |(_, e)| &mut e.value, |(_, e)| e.value);
    }

    /// Dense evaluation of `F0 + sum_i y_i F_i` (row-major, full).
    pub fn evaluate(&self, y: &[f64]) -> Vec<f64> {
        let n = self.size;
        let mut m = vec![0.0; n * n];
        for e in &self.constant {
            m[e.row * n + e.col] += e.value;
        }
        for (i, e) in &self.coefficients {
            m[e.row * n + e.col] += y[*i] * e.value;
        }
        for r in 0..n {
            for c in r + 1..n {
                m[c * n + r] = m[r * n + c];
            }
        }
        m
    }
}

fn merge<T, K: PartialEq>(
    sorted: Vec<T>,
    key: impl Fn(&T) -> K,
    val_mut: impl Fn(&mut T) -> &mut f64,
    val: impl Fn(&T) -> f64,
) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(sorted.len());
    for e in sorted {
        if let Some(last) = out.last_mut() {
            if key(last) == key(&e) {
                *val_mut(last) += val(&e);
                continue;
            }
        }
        out.push(e);
    }
    out.retain(|e| val(e) != 0.0);
    out
}

/// Sparse linear conic program
///
/// ```text
/// maximize  c . y   subject to   A y = b,   F0_j + sum_i y_i F_ij >= 0 (PSD) for every block j.
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub nvars: usize,
    pub objective: Vec<(usize, f64)>,
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub eq_rhs: Vec<f64>,
    pub blocks: Vec<PsdBlock>,
}

fn canonical_row(mut r: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    r.sort_by_key(|e| e.0);
    merge(r, |e| e.0, |e| &mut e.1, |e| e.1)
}

impl ConicProgram {
    pub fn new(
        nvars: usize,
        objective: Vec<(usize, f64)>,
        equalities: Vec<(Vec<(usize, f64)>, f64)>,
        blocks: Vec<PsdBlock>,
    ) -> Result<Self, ConicError> {
        let (rows, rhs): (Vec<_>, Vec<_>) = equalities.into_iter().map(|(r, b)| (canonical_row(r), b)).unzip();
        let p = ConicProgram { nvars, objective: canonical_row(objective), eq_rows: rows, eq_rhs: rhs, blocks };
        p.check()?;
        Ok(p)
    }

    pub fn num_equalities(&self) -> usize {
        self.eq_rows.len()
    }

    fn check(&self) -> Result<(), ConicError> {
        let bad_var = |i: usize| i >= self.nvars;
        if self.objective.iter().any(|e| bad_var(e.0)) || self.eq_rows.iter().flatten().any(|e| bad_var(e.0)) {
            return Err(ConicError::Malformed("variable index out of range".into()));
        }
        for (j, b) in self.blocks.iter().enumerate() {
            if b.size == 0 {
                return Err(ConicError::Malformed(format!("block {j} has size 0")));
            }
            let oob = |e: &SymEntry| e.row >= b.size || e.col >= b.size;
            if b.constant.iter().any(oob) || b.coefficients.iter().any(|(i, e)| bad_var(*i) || oob(e)) {
                return Err(ConicError::Malformed(format!("block {j} has an entry out of range")));
            }
        }
        let all_finite = self.objective.iter().all(|e| e.1.is_finite())
            && self.eq_rows.iter().flatten().all(|e| e.1.is_finite())
            && self.eq_rhs.iter().all(|v| v.is_finite())
            && self.blocks.iter().all(|b| {
                b.constant.iter().all(|e| e.value.is_finite())
                    && b.coefficients.iter().all(|(_, e)| e.value.is_finite())
            });
        if !all_finite {
            return Err(ConicError::Malformed("non-finite program data".into()));
        }
        Ok(())
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.iter().map(|&(i, c)| c * y[i]).sum()
    }

    /// `max_r |A_r y - b_r|`.
    pub fn equality_residual(&self, y: &[f64]) -> f64 {
        self.eq_rows
            .iter()
            .zip(&self.eq_rhs)
            .map(|(r, b)| (r.iter().map(|&(i, a)| a * y[i]).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of each block at `y`.
    pub fn block_min_eigenvalues(&self, y: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| {
                let m = b.evaluate(y);
                let mat = faer::Mat::<f64>::from_fn(b.size, b.size, |r, c| m[r * b.size + c]);
                mat.self_adjoint_eigenvalues(faer::Side::Lower)
                    .map(|e| e.into_iter().fold(f64::INFINITY, f64::min))
                    .unwrap_or(f64::NAN)
            })
            .collect()
    }

    /// Deterministic content hash (hex, 16 digits) over the exact bit
    /// patterns of all program data.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |x: u64| h.update(x.to_le_bytes());
        put(self.nvars as u64);
        put(self.objective.len() as u64);
        for &(i, c) in &self.objective {
            put(i as u64);
            put(c.to_bits());
        }
        put(self.eq_rows.len() as u64);
        for (r, b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            put(r.len() as u64);
            for &(i, a) in r {
                put(i as u64);
                put(a.to_bits());
            }
            put(b.to_bits());
        }
        put(self.blocks.len() as u64);
        for b in &self.blocks {
            put(b.size as u64);
            put(b.constant.len() as u64);
            for e in &b.constant {
                put(e.row as u64);
                put(e.col as u64);
                put(e.value.to_bits());
            }
            put(b.coefficients.len() as u64);
            for (i, e) in &b.coefficients {
                put(*i as u64);
                put(e.row as u64);
                put(e.col as u64);
                put(e.value.to_bits());
            }
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
