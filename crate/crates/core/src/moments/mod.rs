//! Moment-SOS relaxations of the occupation-measure programs.
//!
//! A relaxation is a linear program over truncated pseudo-moment vectors,
//! one per measure, tied together by Liouville equalities and constrained by
//! PSD moment and localizing matrices. The measures and their variables are
//!
//! | tag      | measure                              | variables      | degree |
//! |----------|--------------------------------------|----------------|--------|
//! | `y0`     | initial (stop time, initial state)   | `(s, x)`       | `2k`   |
//! | `ytau`   | terminal (stop time, terminal state) | `(s, x)`       | `2k`   |
//! | `y+`     | occupation inside the window         | `(s, t, x)`    | `2kt`  |
//! | `y-`     | occupation before the window         | `(s, t, x)`    | `2kt`  |
//! | `ynu`    | ES tail distribution (ES only)       | `q`            | `2d`   |
//! | `ynuhat` | ES remainder (ES only)               | `q`            | `2d`   |
//!
//! The initial and terminal measures carry a single time coordinate `s`: the
//! initial measure lives at `t = 0` and the terminal one at `t = s`.

mod relaxation;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Diagnostic, ModelError};
use crate::poly::{MultiIndex, Polynomial};

pub use relaxation::{
    build_es_relaxation, build_mean_relaxation, build_relaxation, build_relaxation_with, temporal_polynomials,
    CostScaling, Equality, EqualityKind, MeasureSlot, MomentRelaxation, RelaxationMeta, TemporalPolynomials,
};

#[derive(Debug, thiserror::Error)]
pub enum MomentError {
    #[error("polynomial of degree {degree} exceeds the basis degree {basis}")]
    DegreeOverflow { degree: u32, basis: u32 },
    #[error("problem failed validation: {}", .0.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Diagnostic>),
    #[error("ES relaxation needs delta = floor(kt / deg p) >= 1 (kt = {kt}, deg p = {deg_p})")]
    DeltaTooSmall { kt: u32, deg_p: u32 },
    #[error("relaxation order must be at least 1")]
    OrderTooSmall,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Poly(#[from] crate::poly::PolyError),
}

/// Measure tags in the fixed global concatenation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasureTag {
    #[serde(rename = "y0")]
    Initial,
    #[serde(rename = "ytau")]
    Terminal,
    #[serde(rename = "y+")]
    Plus,
    #[serde(rename = "y-")]
    Minus,
    #[serde(rename = "ynu")]
    Nu,
    #[serde(rename = "ynuhat")]
    NuHat,
}

impl MeasureTag {
    pub const ALL: [MeasureTag; 6] = [
        MeasureTag::Initial,
        MeasureTag::Terminal,
        MeasureTag::Plus,
        MeasureTag::Minus,
        MeasureTag::Nu,
        MeasureTag::NuHat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureTag::Initial => "y0",
            MeasureTag::Terminal => "ytau",
            MeasureTag::Plus => "y+",
            MeasureTag::Minus => "y-",
            MeasureTag::Nu => "ynu",
            MeasureTag::NuHat => "ynuhat",
        }
    }
}

impl fmt::Display for MeasureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// All monomials of degree at most `degree` in graded lexicographic order,
/// with the inverse map.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentBasis {
    variables: Vec<String>,
    degree: u32,
    monomials: Vec<MultiIndex>,
    index: HashMap<MultiIndex, usize>,
}

impl MomentBasis {
    pub fn new(variables: &[String], degree: u32) -> Self {
        let monomials = MultiIndex::all_up_to(variables.len(), degree);
        let index = monomials.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        MomentBasis { variables: variables.to_vec(), degree, monomials, index }
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[MultiIndex] {
        &self.monomials
    }

    pub fn monomial(&self, id: usize) -> &MultiIndex {
        &self.monomials[id]
    }

    pub fn index_of(&self, alpha: &MultiIndex) -> Option<usize> {
        self.index.get(alpha).copied()
    }

    /// Moment vector of the Dirac measure at `point`.
    pub fn dirac_moments(&self, point: &[f64]) -> Vec<f64> {
        self.monomials
            .iter()
            .map(|m| m.exponents().iter().zip(point).map(|(&e, &x)| x.powi(e as i32)).product())
            .collect()
    }
}

/// A linear functional on a pseudo-moment vector, stored as a sparse map
/// from moment id to coefficient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RieszForm {
    terms: BTreeMap<usize, f64>,
}

impl RieszForm {
    pub fn new() -> Self {
        RieszForm::default()
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut f = RieszForm::new();
        for (i, c) in terms {
            f.add_term(i, c);
        }
        f
    }

    pub fn add_term(&mut self, id: usize, c: f64) {
        if c == 0.0 {
            return;
        }
        let e = self.terms.entry(id).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&id);
        }
    }

    /// `self += k * other`, with `other`'s ids shifted by `offset`.
    pub fn add_scaled(&mut self, other: &RieszForm, k: f64, offset: usize) {
        for (&i, &c) in &other.terms {
            self.add_term(i + offset, k * c);
        }
    }

    pub fn shifted(&self, offset: usize) -> RieszForm {
        RieszForm { terms: self.terms.iter().map(|(&i, &c)| (i + offset, c)).collect() }
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.terms.iter().map(|(&i, &c)| (i, c))
    }

    pub fn coefficient(&self, id: usize) -> f64 {
        self.terms.get(&id).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_id(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }

    pub fn evaluate(&self, y: &[f64]) -> f64 {
        self.terms.iter().map(|(&i, &c)| c * y[i]).sum()
    }
}

/// `L_y(q)` as a form on the moments of `basis`.
pub fn riesz(basis: &MomentBasis, q: &Polynomial) -> Result<RieszForm, MomentError> {
    let q = q.embed(basis.variables())?;
    if q.degree() > basis.degree() {
        return Err(MomentError::DegreeOverflow { degree: q.degree(), basis: basis.degree() });
    }
    Ok(RieszForm::from_terms(q.terms().map(|(a, c)| (basis.index_of(a).expect("within degree"), c))))
}

/// A localizing (or moment) matrix `M(g y)`, with entries
/// `L_y(g * x^(a + b))` for `a, b` in the half-degree monomial list.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdBlockSpec {
    pub measure: Option<MeasureTag>,
    pub label: String,
    pub guard: Polynomial,
    /// Row/column monomials, graded lexicographic.
    pub rows: Vec<MultiIndex>,
    /// Upper triangle, row-major: `(0,0), (0,1), .., (0,n-1), (1,1), ..`.
    entries: Vec<RieszForm>,
}

impl PsdBlockSpec {
    pub fn size(&self) -> usize {
        self.rows.len()
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.size();
        i * n - i * (i + 1) / 2 + j
    }

    pub fn entry(&self, i: usize, j: usize) -> &RieszForm {
        &self.entries[self.slot(i, j)]
    }

    /// Upper-triangle entries as `(i, j, form)`.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, &RieszForm)> + '_ {
        let n = self.size();
        (0..n).flat_map(move |i| (i..n).map(move |j| (i, j))).zip(&self.entries).map(|((i, j), f)| (i, j, f))
    }

    /// Dense matrix (row-major) evaluated on a moment vector of the block's
    /// own measure.
    pub fn evaluate(&self, y: &[f64]) -> Vec<f64> {
        let n = self.size();
        let mut m = vec![0.0; n * n];
        for (i, j, f) in self.upper_entries() {
            let v = f.evaluate(y);
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
        m
    }
}

/// Half-degree for a guard at relaxation order `k`: `k - ceil(deg g / 2)`.
pub fn localizing_order(k: u32, guard: &Polynomial) -> Option<u32> {
    k.checked_sub(guard.degree().div_ceil(2))
}

/// Builds `M_k(g y)`. The block has side `C(n + kh, n)` with
/// `kh = k - ceil(deg g / 2)`.
pub fn localizing_block(basis: &MomentBasis, guard: &Polynomial, k: u32) -> Result<PsdBlockSpec, MomentError> {
    let g = guard.embed(basis.variables())?;
    let kh = localizing_order(k, &g).ok_or(MomentError::DegreeOverflow { degree: g.degree(), basis: 2 * k })?;
    if 2 * kh + g.degree() > basis.degree() {
        return Err(MomentError::DegreeOverflow { degree: 2 * kh + g.degree(), basis: basis.degree() });
    }
    let rows = MultiIndex::all_up_to(basis.variables().len(), kh);
    let n = rows.len();
    let gterms: Vec<(MultiIndex, f64)> = g.terms().map(|(a, c)| (a.clone(), c)).collect();
    let mut entries = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let ab = rows[i].add(&rows[j]);
            let form = RieszForm::from_terms(
                gterms.iter().map(|(gm, c)| (basis.index_of(&ab.add(gm)).expect("within degree"), *c)),
            );
            entries.push(form);
        }
    }
    Ok(PsdBlockSpec { measure: None, label: String::new(), guard: g, rows, entries })
}
