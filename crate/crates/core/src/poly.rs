//! Sparse multivariate polynomials over named variables.
//!
//! Coefficients are `f64`. Terms are kept in canonical form (no stored zeros)
//! and ordered by the graded lexicographic monomial order: lower total degree
//! first, and within one degree the monomial with the larger exponent on the
//! earlier variable comes first (`1, x1, x2, x1^2, x1*x2, x2^2, ...`). Every
//! moment matrix layout downstream depends on this order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable sets differ: {left:?} vs {right:?}")]
    VariableMismatch { left: Vec<String>, right: Vec<String> },
    #[error("expected a point of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, PolyError>;

/// Exponent vector of a monomial, one entry per ambient variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(nvars: usize) -> Self {
        MultiIndex(vec![0; nvars])
    }

    pub fn unit(nvars: usize, var: usize) -> Self {
        let mut e = vec![0; nvars];
        e[var] = 1;
        MultiIndex(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// All multi-indices in `nvars` variables with total degree at most
    /// `degree`, listed in graded lexicographic order.
    pub fn all_up_to(nvars: usize, degree: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for d in 0..=degree {
            let mut cur = vec![0u32; nvars];
            of_degree(nvars, d, 0, &mut cur, &mut out);
        }
        out
    }
}

fn of_degree(nvars: usize, remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if nvars == 0 {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    if pos == nvars - 1 {
        cur[pos] = remaining;
        out.push(MultiIndex(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        of_degree(nvars, remaining - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    vars: Vec<String>,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(vars: &[String]) -> Self {
        Polynomial { vars: vars.to_vec(), terms: BTreeMap::new() }
    }

    pub fn constant(vars: &[String], c: f64) -> Self {
        let mut p = Self::zero(vars);
        p.add_term(MultiIndex::zero(vars.len()), c);
        p
    }

    pub fn var(vars: &[String], name: &str) -> Result<Self> {
        let i = index_of(vars, name)?;
        let mut p = Self::zero(vars);
        p.add_term(MultiIndex::unit(vars.len(), i), 1.0);
        Ok(p)
    }

    pub fn monomial(vars: &[String], alpha: MultiIndex, coef: f64) -> Self {
        assert_eq!(alpha.len(), vars.len(), "multi-index length must match the variable count");
        let mut p = Self::zero(vars);
        p.add_term(alpha, coef);
        p
    }

    pub fn from_terms(vars: &[String], terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut p = Self::zero(vars);
        for (a, c) in terms {
            assert_eq!(a.len(), vars.len(), "multi-index length must match the variable count");
            p.add_term(a, c);
        }
        p
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(a, c)| (a, *c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, var: &str) -> Result<u32> {
        let i = index_of(&self.vars, var)?;
        Ok(self.terms.keys().map(|a| a.0[i]).max().unwrap_or(0))
    }

    /// True when no term involves `var` (unknown variables count as unused).
    pub fn is_free_of(&self, var: &str) -> bool {
        match self.vars.iter().position(|v| v == var) {
            Some(i) => self.terms.keys().all(|a| a.0[i] == 0),
            None => true,
        }
    }

    fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(alpha);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn check_same(&self, other: &Polynomial) -> Result<()> {
        if self.vars != other.vars {
            return Err(PolyError::VariableMismatch { left: self.vars.clone(), right: other.vars.clone() });
        }
        Ok(())
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.add_term(a.clone(), *c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.add_term(a.clone(), -*c);
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = Polynomial::zero(&self.vars);
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                out.add_term(a.add(b), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, k: f64) -> Polynomial {
        let mut out = Polynomial::zero(&self.vars);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), c * k);
        }
        out
    }

    pub fn add_constant(&self, k: f64) -> Polynomial {
        let mut out = self.clone();
        out.add_term(MultiIndex::zero(self.vars.len()), k);
        out
    }

    pub fn pow(&self, e: u32) -> Polynomial {
        let mut result = Polynomial::constant(&self.vars, 1.0);
        let mut base = self.clone();
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base).expect("same variables");
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base).expect("same variables");
            }
        }
        result
    }

    /// Formal partial derivative with respect to `var`, applied `order` times.
    pub fn partial(&self, var: &str, order: u32) -> Result<Polynomial> {
        let i = index_of(&self.vars, var)?;
        Ok(self.partial_index(i, order))
    }

    pub fn partial_index(&self, i: usize, order: u32) -> Polynomial {
        let mut out = Polynomial::zero(&self.vars);
        for (a, c) in &self.terms {
            let e = a.0[i];
            if e < order {
                continue;
            }
            let mut factor = 1.0;
            for j in 0..order {
                factor *= (e - j) as f64;
            }
            let mut b = a.clone();
            b.0[i] -= order;
            out.add_term(b, c * factor);
        }
        out
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.vars.len() {
            return Err(PolyError::DimensionMismatch { expected: self.vars.len(), got: point.len() });
        }
        Ok(self.eval_unchecked(point))
    }

    pub(crate) fn eval_unchecked(&self, point: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (a, c) in &self.terms {
            let mut m = *c;
            for (x, &e) in point.iter().zip(&a.0) {
                if e > 0 {
                    m *= x.powi(e as i32);
                }
            }
            acc += m;
        }
        acc
    }

    /// Re-expresses the polynomial over another variable list. Every variable
    /// actually used must appear in `vars`.
    pub fn embed(&self, vars: &[String]) -> Result<Polynomial> {
        let mut map = Vec::with_capacity(self.vars.len());
        for (i, v) in self.vars.iter().enumerate() {
            match vars.iter().position(|w| w == v) {
                Some(j) => map.push(Some(j)),
                None => {
                    if self.terms.keys().any(|a| a.0[i] != 0) {
                        return Err(PolyError::UnknownVariable(v.clone()));
                    }
                    map.push(None);
                }
            }
        }
        let mut out = Polynomial::zero(vars);
        for (a, c) in &self.terms {
            let mut b = vec![0u32; vars.len()];
            for (i, &e) in a.0.iter().enumerate() {
                if let Some(j) = map[i] {
                    b[j] += e;
                }
            }
            out.add_term(MultiIndex(b), *c);
        }
        Ok(out)
    }

    /// Composition `poly(var := replacement)`. The replacement is embedded in
    /// the result's variable list, which is `self`'s variables followed by any
    /// new variables of the replacement.
    pub fn substitute(&self, var: &str, replacement: &Polynomial) -> Result<Polynomial> {
        index_of(&self.vars, var)?;
        self.substitute_many(&[(var.to_string(), replacement.clone())])
    }

    /// Simultaneous substitution of several variables.
    pub fn substitute_many(&self, subs: &[(String, Polynomial)]) -> Result<Polynomial> {
        let mut vars = self.vars.clone();
        for (_, r) in subs {
            for v in &r.vars {
                if !vars.contains(v) {
                    vars.push(v.clone());
                }
            }
        }
        let mut repl: Vec<Option<Polynomial>> = vec![None; self.vars.len()];
        for (name, r) in subs {
            let i = index_of(&self.vars, name)?;
            repl[i] = Some(r.embed(&vars)?);
        }
        let me = self.embed(&vars)?;
        let nv = vars.len();
        let mut cache: Vec<Vec<Polynomial>> = repl
            .iter()
            .map(|r| match r {
                Some(p) => vec![Polynomial::constant(&vars, 1.0), p.clone()],
                None => Vec::new(),
            })
            .collect();
        let mut out = Polynomial::zero(&vars);
        for (a, c) in &me.terms {
            let mut kept = vec![0u32; nv];
            let mut term = Polynomial::constant(&vars, *c);
            for (i, &e) in a.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if i < repl.len() && repl[i].is_some() {
                    let powers = &mut cache[i];
                    while powers.len() <= e as usize {
                        let next = powers.last().unwrap().mul(&powers[1]).expect("same variables");
                        powers.push(next);
                    }
                    term = term.mul(&powers[e as usize]).expect("same variables");
                } else {
                    kept[i] = e;
                }
            }
            for (b, cb) in term.terms {
                out.add_term(b.add(&MultiIndex(kept.clone())), cb);
            }
        }
        Ok(out)
    }

    /// Replaces each power `var^j` by `values[j]` (a linear functional in
    /// `var`, e.g. an expectation against a moment sequence) and drops `var`
    /// from the result. Fails if a power exceeds the supplied values.
    pub fn integrate_out(&self, var: &str, values: &[f64]) -> Result<Option<Polynomial>> {
        let i = index_of(&self.vars, var)?;
        let vars: Vec<String> = self.vars.iter().filter(|v| *v != var).cloned().collect();
        let mut out = Polynomial::zero(&vars);
        for (a, c) in &self.terms {
            let e = a.0[i] as usize;
            if e >= values.len() {
                return Ok(None);
            }
            let mut b = a.0.clone();
            b.remove(i);
            out.add_term(MultiIndex(b), c * values[e]);
        }
        Ok(Some(out))
    }

    /// Parses the textual grammar: terms joined by `+`/`-`, each term an
    /// optional decimal coefficient followed by `*`-separated powers `x^k`.
    pub fn parse(text: &str, vars: &[String]) -> Result<Polynomial> {
        Parser { src: text.as_bytes(), pos: 0, vars }.expression()
    }

    /// Largest absolute coefficient (0 for the zero polynomial).
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }
}

fn index_of(vars: &[String], name: &str) -> Result<usize> {
    vars.iter().position(|v| v == name).ok_or_else(|| PolyError::UnknownVariable(name.to_string()))
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (a, &c)) in self.terms.iter().enumerate() {
            let mag = c.abs();
            if k == 0 {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else if c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut factors: Vec<String> = Vec::new();
            for (v, &e) in self.vars.iter().zip(&a.0) {
                match e {
                    0 => {}
                    1 => factors.push(v.clone()),
                    _ => factors.push(format!("{v}^{e}")),
                }
            }
            if factors.is_empty() {
                write!(f, "{mag}")?;
            } else if mag == 1.0 {
                write!(f, "{}", factors.join("*"))?;
            } else {
                write!(f, "{mag}*{}", factors.join("*"))?;
            }
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(PolyError::Syntax { pos: self.pos, msg: msg.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expression(&mut self) -> Result<Polynomial> {
        let mut out = Polynomial::zero(self.vars);
        let mut sign = 1.0;
        match self.peek() {
            Some(b'-') => {
                sign = -1.0;
                self.pos += 1;
            }
            Some(b'+') => self.pos += 1,
            None => return self.err("empty expression"),
            _ => {}
        }
        loop {
            let (alpha, c) = self.term()?;
            out.add_term(alpha, sign * c);
            match self.peek() {
                Some(b'+') => {
                    sign = 1.0;
                    self.pos += 1;
                }
                Some(b'-') => {
                    sign = -1.0;
                    self.pos += 1;
                }
                None => return Ok(out),
                Some(ch) => return self.err(format!("unexpected character `{}`", ch as char)),
            }
        }
    }

    fn term(&mut self) -> Result<(MultiIndex, f64)> {
        let mut coef = 1.0;
        let mut exps = vec![0u32; self.vars.len()];
        let mut any = false;
        if let Some(ch) = self.peek() {
            if ch.is_ascii_digit() || ch == b'.' {
                coef = self.number()?;
                any = true;
            }
        }
        loop {
            let mut star = false;
            if self.peek() == Some(b'*') {
                if !any {
                    return self.err("`*` without a left operand");
                }
                self.pos += 1;
                star = true;
            }
            match self.peek() {
                Some(ch) if ch.is_ascii_alphabetic() => {
                    let name = self.ident();
                    let i = match self.vars.iter().position(|v| *v == name) {
                        Some(i) => i,
                        None => return Err(PolyError::UnknownVariable(name)),
                    };
                    let mut e = 1u32;
                    if self.peek() == Some(b'^') {
                        self.pos += 1;
                        e = self.integer()?;
                    }
                    exps[i] += e;
                    any = true;
                }
                _ if star => return self.err("expected a variable after `*`"),
                _ => break,
            }
        }
        if !any {
            return self.err("expected a coefficient or variable");
        }
        Ok((MultiIndex(exps), coef))
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn integer(&mut self) -> Result<u32> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected an integer exponent");
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap().parse().or_else(|_| self.err("exponent out of range"))
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return self.err("malformed number");
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            if digits(self) == 0 {
                // not an exponent; leave `e` for the variable scanner
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.err(format!("malformed number `{text}`"))
            }
        }
    }
}

/// Convenience for building variable-name lists.
pub fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}
