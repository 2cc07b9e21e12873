//! SDPA sparse format (`.dat-s`) export and import, plus SDPA-style
//! solution files.
//!
//! SDPA's primal is `min c'.x  s.t.  sum_i x_i F'_i - F'_0 >= 0`. A program
//! `max c.y  s.t.  A y = b,  F_0 + sum_i y_i F_i >= 0` is written with
//! `x = y`, `c' = -c`, `F'_0 = -F_0` and `F'_i = F_i`. Equality rows become
//! one trailing diagonal block of size `2m` holding `A y - b >= 0` followed
//! by `b - A y >= 0`. A `.meta.json` sidecar records the program hash and
//! where that block sits so the import can restore the equalities exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{assess_point, ConicError, ConicProgram, ConicSolution, Duals, PsdBlock, SymEntry};

/// Sidecar written next to every exported file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpaSidecar {
    pub hash: String,
    pub nvars: usize,
    /// 1-based SDPA block number of the equality block, if any.
    pub equality_block: Option<usize>,
    pub equality_rows: usize,
    /// Caller-supplied description (variable ordering, scaling, ...).
    pub context: serde_json::Value,
}

/// `foo.dat-s` -> `foo.dat-s.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn io_err(path: &Path, source: std::io::Error) -> ConicError {
    ConicError::Io { path: path.display().to_string(), source }
}

/// Renders `prog` in SDPA sparse format.
pub fn to_sdpa_string(prog: &ConicProgram) -> String {
    let m = prog.num_equalities();
    let mut out = String::new();
    let _ = writeln!(out, "\"maximize c.y subject to F(y) >= 0; objective and F0 negated for SDPA's minimization form");
    if m > 0 {
        let _ = writeln!(
            out,
            "\"block {} is diagonal: rows 1..{m} hold A y - b >= 0, rows {}..{} hold b - A y >= 0",
            prog.blocks.len() + 1,
            m + 1,
            2 * m
        );
    }
    let _ = writeln!(out, "* hash: {}", prog.hash());
    let _ = writeln!(out, "{}", prog.nvars);
    let nblocks = prog.blocks.len() + usize::from(m > 0);
    let _ = writeln!(out, "{nblocks}");
    let mut sizes: Vec<String> = prog.blocks.iter().map(|b| b.size.to_string()).collect();
    if m > 0 {
        sizes.push(format!("-{}", 2 * m));
    }
    let _ = writeln!(out, "{}", sizes.join(" "));
    let mut c = vec![0.0; prog.nvars];
    for &(i, v) in &prog.objective {
        c[i] = -v;
    }
    let _ = writeln!(out, "{}", c.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" "));

    let mut lines: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for (bi, b) in prog.blocks.iter().enumerate() {
        for e in &b.constant {
            lines.push((0, bi + 1, e.row + 1, e.col + 1, -e.value));
        }
        for (i, e) in &b.coefficients {
            lines.push((i + 1, bi + 1, e.row + 1, e.col + 1, e.value));
        }
    }
    if m > 0 {
        let blk = prog.blocks.len() + 1;
        for (r, (row, &rhs)) in prog.eq_rows.iter().zip(&prog.eq_rhs).enumerate() {
            let (d1, d2) = (r + 1, m + r + 1);
            if rhs != 0.0 {
                lines.push((0, blk, d1, d1, rhs));
                lines.push((0, blk, d2, d2, -rhs));
            }
            for &(i, a) in row {
                lines.push((i + 1, blk, d1, d1, a));
                lines.push((i + 1, blk, d2, d2, -a));
            }
        }
    }
    lines.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    for (mat, blk, i, j, v) in lines {
        let _ = writeln!(out, "{mat} {blk} {i} {j} {v:.16e}");
    }
    out
}

/// Writes `prog` to `path` and its sidecar next to it; returns the sidecar
/// path.
pub fn export_sdpa(prog: &ConicProgram, path: &Path, context: serde_json::Value) -> Result<PathBuf, ConicError> {
    fs::write(path, to_sdpa_string(prog)).map_err(|e| io_err(path, e))?;
    let m = prog.num_equalities();
    let side = SdpaSidecar {
        hash: prog.hash(),
        nvars: prog.nvars,
        equality_block: (m > 0).then_some(prog.blocks.len() + 1),
        equality_rows: m,
        context,
    };
    let sp = sidecar_path(path);
    let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    fs::write(&sp, text).map_err(|e| io_err(&sp, e))?;
    Ok(sp)
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    origin: String,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str, origin: &str) -> Self {
        let mut items = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let t = line.trim_start();
            if t.starts_with('"') || t.starts_with('*') {
                continue;
            }
            for tok in line.split(|c: char| c.is_whitespace() || ",{}()".contains(c)).filter(|s| !s.is_empty()) {
                items.push((ln + 1, tok));
            }
        }
        Tokens { items, pos: 0, origin: origin.to_string() }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> ConicError {
        ConicError::Parse { path: self.origin.clone(), line, msg: msg.into() }
    }

    fn line(&self) -> usize {
        self.items.get(self.pos).or(self.items.last()).map(|t| t.0).unwrap_or(0)
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ConicError> {
        let Some(&(ln, tok)) = self.items.get(self.pos) else {
            return Err(self.err(self.line(), format!("unexpected end of file while reading {what}")));
        };
        self.pos += 1;
        tok.parse().map_err(|_| self.err(ln, format!("expected {what}, found `{tok}`")))
    }

    fn done(&self) -> bool {
        self.pos >= self.items.len()
    }
}

/// Parses SDPA sparse text. With a sidecar naming an equality block, that
/// block is turned back into equality rows; other diagonal blocks become
/// `1 x 1` PSD blocks.
pub fn parse_sdpa(text: &str, origin: &str, sidecar: Option<&SdpaSidecar>) -> Result<ConicProgram, ConicError> {
    let mut t = Tokens::new(text, origin);
    let nvars: usize = t.next("the number of variables")?;
    let nblocks: usize = t.next("the number of blocks")?;
    let mut sizes = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let s: i64 = t.next("a block size")?;
        if s == 0 {
            return Err(t.err(t.line(), "block size 0"));
        }
        sizes.push(s);
    }
    let mut objective = Vec::new();
    for i in 0..nvars {
        let c: f64 = t.next("an objective coefficient")?;
        if c != 0.0 {
            objective.push((i, -c));
        }
    }
    let eq_block = sidecar.and_then(|s| s.equality_block);
    if let Some(b) = eq_block {
        if b == 0 || b > nblocks || sizes[b - 1] >= 0 || sizes[b - 1] % 2 != 0 {
            return Err(ConicError::Mismatch(format!("sidecar equality block {b} is not an even diagonal block")));
        }
    }
    // per SDPA block: dense-or-diagonal entries
    let mut entries: Vec<Vec<(usize, usize, usize, f64)>> = vec![Vec::new(); nblocks];
    while !t.done() {
        let ln = t.line();
        let mat: usize = t.next("a matrix number")?;
        let blk: usize = t.next("a block number")?;
        let i: usize = t.next("a row index")?;
        let j: usize = t.next("a column index")?;
        let v: f64 = t.next("an entry value")?;
        if mat > nvars {
            return Err(t.err(ln, format!("matrix number {mat} exceeds {nvars}")));
        }
        if blk == 0 || blk > nblocks {
            return Err(t.err(ln, format!("block number {blk} out of range 1..={nblocks}")));
        }
        let n = sizes[blk - 1].unsigned_abs() as usize;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(t.err(ln, format!("index ({i}, {j}) outside block {blk} of size {n}")));
        }
        if sizes[blk - 1] < 0 && i != j {
            return Err(t.err(ln, format!("off-diagonal entry in diagonal block {blk}")));
        }
        if !v.is_finite() {
            return Err(t.err(ln, "non-finite entry"));
        }
        entries[blk - 1].push((mat, i - 1, j - 1, v));
    }

    let mut blocks = Vec::new();
    let mut equalities = Vec::new();
    for (b, list) in entries.into_iter().enumerate() {
        let size = sizes[b];
        if Some(b + 1) == eq_block {
            let m = size.unsigned_abs() as usize / 2;
            let mut rows: Vec<(Vec<(usize, f64)>, f64)> = vec![(Vec::new(), 0.0); m];
            for (mat, i, _, v) in list {
                if i >= m {
                    continue;
                }
                if mat == 0 {
                    rows[i].1 = v;
                } else {
                    rows[i].0.push((mat - 1, v));
                }
            }
            equalities = rows;
        } else if size < 0 {
            let n = size.unsigned_abs() as usize;
            let mut diag: Vec<(Vec<SymEntry>, Vec<(usize, SymEntry)>)> = vec![(Vec::new(), Vec::new()); n];
            for (mat, i, _, v) in list {
                if mat == 0 {
                    diag[i].0.push(SymEntry { row: 0, col: 0, value: -v });
                } else {
                    diag[i].1.push((mat - 1, SymEntry { row: 0, col: 0, value: v }));
                }
            }
            blocks.extend(diag.into_iter().map(|(c, v)| PsdBlock::new(1, c, v)));
        } else {
            let mut constant = Vec::new();
            let mut coeffs = Vec::new();
            for (mat, i, j, v) in list {
                let e = SymEntry { row: i.min(j), col: i.max(j), value: if mat == 0 { -v } else { v } };
                if mat == 0 {
                    constant.push(e);
                } else {
                    coeffs.push((mat - 1, e));
                }
            }
            blocks.push(PsdBlock::new(size as usize, constant, coeffs));
        }
    }
    let prog = ConicProgram::new(nvars, objective, equalities, blocks)?;
    if let Some(s) = sidecar {
        if s.hash != prog.hash() {
            return Err(ConicError::Mismatch(format!(
                "{origin}: program hash {} differs from the sidecar's {}",
                prog.hash(),
                s.hash
            )));
        }
    }
    Ok(prog)
}

/// Reads an SDPA file, using its sidecar when one exists next to it.
pub fn import_sdpa(path: &Path) -> Result<(ConicProgram, Option<SdpaSidecar>), ConicError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let sp = sidecar_path(path);
    let sidecar = if sp.exists() {
        let s = fs::read_to_string(&sp).map_err(|e| io_err(&sp, e))?;
        Some(serde_json::from_str::<SdpaSidecar>(&s).map_err(|e| ConicError::Parse {
            path: sp.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?)
    } else {
        None
    };
    let prog = parse_sdpa(&text, &path.display().to_string(), sidecar.as_ref())?;
    Ok((prog, sidecar))
}

fn fmt_vec(v: &[f64]) -> String {
    format!("{{{}}}", v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(","))
}

/// Writes `sol` as an SDPA-style result file (`xVec` is `y`, `yMat` holds
/// the block multipliers followed by the equality block).
pub fn solution_string(prog: &ConicProgram, sol: &ConicSolution) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "* hash: {}", prog.hash());
    let _ = writeln!(out, "objValPrimal = {:.16e}", -sol.value);
    let _ = writeln!(out, "objValDual = {:.16e}", -sol.dual_value.unwrap_or(sol.value));
    let _ = writeln!(out, "xVec = \n{}", fmt_vec(&sol.y));
    let _ = writeln!(out, "yMat = \n{{");
    if let Some(d) = &sol.duals {
        for (b, x) in prog.blocks.iter().zip(&d.blocks) {
            let n = b.size;
            let rows: Vec<String> = (0..n).map(|r| fmt_vec(&x[r * n..(r + 1) * n])).collect();
            let _ = writeln!(out, "{{ {} }}", rows.join(", "));
        }
        let m = prog.num_equalities();
        if m > 0 {
            // lambda = v - u with u, v >= 0
            let mut diag = vec![0.0; 2 * m];
            for (r, &l) in d.equalities.iter().enumerate() {
                if l >= 0.0 {
                    diag[m + r] = l;
                } else {
                    diag[r] = -l;
                }
            }
            let _ = writeln!(out, "{}", fmt_vec(&diag));
        }
    }
    let _ = writeln!(out, "}}");
    out
}

pub fn write_solution(path: &Path, prog: &ConicProgram, sol: &ConicSolution) -> Result<(), ConicError> {
    fs::write(path, solution_string(prog, sol)).map_err(|e| io_err(path, e))
}

/// Parses an SDPA-style result for `prog` and re-derives residuals and
/// status from the imported point.
pub fn parse_solution(
    text: &str,
    origin: &str,
    prog: &ConicProgram,
    feas_tol: f64,
) -> Result<ConicSolution, ConicError> {
    let perr = |line: usize, msg: String| ConicError::Parse { path: origin.to_string(), line, msg };
    for (ln, line) in text.lines().enumerate() {
        if let Some(h) = line.trim().strip_prefix("* hash:") {
            if h.trim() != prog.hash() {
                return Err(ConicError::Mismatch(format!(
                    "{origin}:{}: solution hash {} does not match program hash {}",
                    ln + 1,
                    h.trim(),
                    prog.hash()
                )));
            }
        }
    }
    let section = |name: &str| -> Option<(usize, usize)> {
        let at = text.find(name)?;
        Some((at + name.len(), text[..at].lines().count().max(1)))
    };
    let numbers = |s: &str, line0: usize| -> Result<Vec<Vec<f64>>, ConicError> {
        // returns the innermost brace groups in order
        let mut groups: Vec<Vec<f64>> = Vec::new();
        let mut cur: Option<String> = None;
        let mut depth = 0usize;
        let mut line = line0;
        for ch in s.chars() {
            match ch {
                '\n' => line += 1,
                '{' => {
                    depth += 1;
                    cur = Some(String::new());
                }
                '}' => {
                    if let Some(buf) = cur.take() {
                        let vals = buf
                            .split(|c: char| c == ',' || c.is_whitespace())
                            .filter(|t| !t.is_empty())
                            .map(|t| t.parse::<f64>().map_err(|_| perr(line, format!("bad number `{t}`"))))
                            .collect::<Result<Vec<_>, _>>()?;
                        groups.push(vals);
                    }
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        break;
                    }
                }
                c => {
                    if let Some(buf) = cur.as_mut() {
                        buf.push(c);
                    }
                }
            }
        }
        if depth != 0 {
            return Err(perr(line, "unbalanced braces".into()));
        }
        Ok(groups)
    };
    let (xs, xl) = section("xVec").ok_or_else(|| perr(1, "missing xVec".into()))?;
    let y = numbers(&text[xs..], xl)?.into_iter().next().unwrap_or_default();
    if y.len() != prog.nvars {
        return Err(ConicError::Mismatch(format!(
            "xVec has {} entries, program has {} variables",
            y.len(),
            prog.nvars
        )));
    }
    let duals = match section("yMat") {
        None => None,
        Some((ys, yl)) => {
            let groups = numbers(&text[ys..], yl)?;
            if groups.is_empty() {
                None
            } else {
                let mut it = groups.into_iter();
                let mut blocks = Vec::with_capacity(prog.blocks.len());
                for b in &prog.blocks {
                    let mut flat = Vec::with_capacity(b.size * b.size);
                    for _ in 0..b.size {
                        let row = it.next().ok_or_else(|| ConicError::Mismatch("yMat has too few rows".into()))?;
                        if row.len() != b.size {
                            return Err(ConicError::Mismatch(format!(
                                "yMat row of length {} in a block of size {}",
                                row.len(),
                                b.size
                            )));
                        }
                        flat.extend(row);
                    }
                    blocks.push(flat);
                }
                let m = prog.num_equalities();
                let equalities = if m > 0 {
                    let diag = it.next().ok_or_else(|| ConicError::Mismatch("yMat lacks the equality block".into()))?;
                    if diag.len() != 2 * m {
                        return Err(ConicError::Mismatch(format!(
                            "equality block has {} entries, expected {}",
                            diag.len(),
                            2 * m
                        )));
                    }
                    (0..m).map(|r| diag[m + r] - diag[r]).collect()
                } else {
                    Vec::new()
                };
                Some(Duals { equalities, blocks })
            }
        }
    };
    Ok(assess_point(prog, y, duals, feas_tol))
}

pub fn import_sdpa_solution(path: &Path, prog: &ConicProgram, feas_tol: f64) -> Result<ConicSolution, ConicError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_solution(&text, &path.display().to_string(), prog, feas_tol)
}
