use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use super::{localizing_block, localizing_order, MeasureTag, MomentBasis, MomentError, PsdBlockSpec, RieszForm};
use crate::conic::{ConicProgram, PsdBlock, SymEntry};
use crate::model::{augmented_vars, RiskKind, RiskProblem, Scaling, Severity, STOP_VAR};
use crate::poly::{names, MultiIndex, Polynomial};

/// The time-support polynomials, each nonnegative exactly on its set:
/// `g_h(s) = (T - s)(s - h)`, `g+(s,t) = (s - t)(t - s + h)` and
/// `g-(s,t) = (s - t - h) t` (with `h + dt` in place of `h` for discrete
/// time). `g_h` is over `(s)`, the other two over `(s, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalPolynomials {
    pub g_h: Polynomial,
    pub g_plus: Polynomial,
    pub g_minus: Polynomial,
}

pub fn temporal_polynomials(problem: &RiskProblem) -> TemporalPolynomials {
    let (t_end, h) = (problem.horizon, problem.window);
    let s1 = names(&[STOP_VAR]);
    let st = names(&["s", "t"]);
    let s = Polynomial::var(&s1, "s").expect("declared");
    let g_h = s.scale(-1.0).add_constant(t_end).mul(&s.add_constant(-h)).expect("same variables");
    let s = Polynomial::var(&st, "s").expect("declared");
    let t = Polynomial::var(&st, "t").expect("declared");
    let s_minus_t = s.sub(&t).expect("same variables");
    let g_plus = s_minus_t.mul(&s_minus_t.scale(-1.0).add_constant(h)).expect("same variables");
    let gap = h + problem.dynamics.dt().unwrap_or(0.0);
    let g_minus = s_minus_t.add_constant(-gap).mul(&t).expect("same variables");
    TemporalPolynomials { g_h, g_plus, g_minus }
}

/// Affine normalization of the cost: `p' = (p - center) / radius`, which
/// maps the outer cost range onto `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostScaling {
    pub center: f64,
    pub radius: f64,
}

impl CostScaling {
    pub fn unscale(&self, v: f64) -> f64 {
        self.center + self.radius * v
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.center) / self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EqualityKind {
    /// Liouville row for the test monomial `s^a t^b x^c` (exponents over
    /// `(s, t, x)`).
    Liouville(Vec<u32>),
    InitialMass,
    WindowMass,
    TailMass,
    /// ES pushforward row for `q^l`.
    TailMoment(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Equality {
    /// Form over the concatenated variable vector.
    pub form: RieszForm,
    pub rhs: f64,
    pub kind: EqualityKind,
}

/// One measure's block of the variable vector.
///
/// The stored pseudo-moments are those of the measure pushed forward to
/// local coordinates `z`, in which the measure's support sits roughly in the
/// unit box. Each original variable is an affine function of `z` (`chart`),
/// and `images[a]` expresses the original moment `x^a` in local moments.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureSlot {
    pub tag: MeasureTag,
    pub basis: MomentBasis,
    pub offset: usize,
    /// Half-degree of the plain moment matrix.
    pub order: u32,
    pub chart: Vec<(String, Polynomial)>,
    images: Vec<Vec<(usize, f64)>>,
}

impl MeasureSlot {
    fn new(tag: MeasureTag, basis: MomentBasis, order: u32, chart: Vec<(String, Polynomial)>) -> Self {
        let images = chart_images(&basis, &chart);
        MeasureSlot { tag, basis, offset: 0, order, chart, images }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.basis.len()
    }

    /// `L(p)` for `p` over the original variables, as a form on the local
    /// moments (ids relative to the slot).
    pub fn functional(&self, p: &Polynomial) -> Result<RieszForm, MomentError> {
        let p = p.embed(self.basis.variables())?;
        if p.degree() > self.basis.degree() {
            return Err(MomentError::DegreeOverflow { degree: p.degree(), basis: self.basis.degree() });
        }
        let mut f = RieszForm::new();
        for (a, c) in p.terms() {
            for &(i, v) in &self.images[self.basis.index_of(a).expect("within degree")] {
                f.add_term(i, c * v);
            }
        }
        Ok(f)
    }

    /// A guard over the original variables rewritten in local coordinates
    /// and normalized to unit largest coefficient.
    pub fn local_guard(&self, g: &Polynomial) -> Result<Polynomial, MomentError> {
        let h = g.embed(self.basis.variables())?.substitute_many(&self.chart)?;
        let m = h.max_abs_coefficient();
        Ok(if m > 0.0 { h.scale(1.0 / m) } else { h })
    }

    /// Original-coordinate moments from the slot's local moments.
    pub fn original_moments(&self, local: &[f64]) -> Vec<f64> {
        self.images.iter().map(|img| img.iter().map(|&(i, v)| v * local[i]).sum()).collect()
    }
}

/// `images[a]` lists the local moments and weights making up `x^a`, built
/// as `x^a = x^(a - e_j) * x_j` with `j` the first variable present in `a`.
fn chart_images(basis: &MomentBasis, chart: &[(String, Polynomial)]) -> Vec<Vec<(usize, f64)>> {
    let vars = basis.variables();
    let n = vars.len();
    let affine: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|j| {
            let e = match chart.iter().find(|(v, _)| *v == vars[j]) {
                Some((_, p)) => p.embed(vars).expect("chart over the slot variables"),
                None => Polynomial::var(vars, &vars[j]).expect("declared"),
            };
            e.terms().map(|(a, c)| (basis.index_of(a).expect("affine"), c)).collect()
        })
        .collect();
    let mut images: Vec<Vec<(usize, f64)>> = Vec::with_capacity(basis.len());
    for a in basis.monomials() {
        let ex = a.exponents();
        let Some(j) = ex.iter().position(|&e| e > 0) else {
            images.push(vec![(0, 1.0)]);
            continue;
        };
        let mut prev = ex.to_vec();
        prev[j] -= 1;
        let prev = &images[basis.index_of(&MultiIndex::new(prev)).expect("graded order")];
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, v) in prev {
            for &(l, w) in &affine[j] {
                let id = basis.index_of(&basis.monomial(i).add(basis.monomial(l))).expect("within degree");
                *acc.entry(id).or_insert(0.0) += v * w;
            }
        }
        images.push(acc.into_iter().filter(|e| e.1 != 0.0).collect());
    }
    images
}

/// `name := center + radius * name` over `vars`.
fn affine_sub(vars: &[String], name: &str, center: f64, radius: f64) -> (String, Polynomial) {
    let v = Polynomial::var(vars, name).expect("declared");
    (name.to_string(), v.scale(radius).add_constant(center))
}

fn safe_radius(r: f64) -> f64 {
    if r > 1e-9 {
        r
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationMeta {
    pub name: String,
    pub states: Vec<String>,
    pub k: u32,
    pub k_tilde: u32,
    pub delta: Option<u32>,
    pub risk: RiskKind,
    pub scaling: Scaling,
    pub cost_scaling: CostScaling,
    /// Horizon, window and step in scaled time.
    pub horizon: f64,
    pub window: f64,
    pub dt: Option<f64>,
    pub cost_range: (f64, f64),
    pub hash: String,
}

/// An assembled moment relaxation in scaled coordinates.
#[derive(Clone, Debug)]
pub struct MomentRelaxation {
    pub measures: Vec<MeasureSlot>,
    pub objective: RieszForm,
    pub equalities: Vec<Equality>,
    pub psd_blocks: Vec<PsdBlockSpec>,
    pub meta: RelaxationMeta,
    /// The problem after state/time scaling and cost normalization.
    pub scaled_problem: RiskProblem,
}

impl MomentRelaxation {
    pub fn nvars(&self) -> usize {
        self.measures.iter().map(|m| m.basis.len()).sum()
    }

    pub fn slot(&self, tag: MeasureTag) -> Option<&MeasureSlot> {
        self.measures.iter().find(|m| m.tag == tag)
    }

    /// The slice of `y` holding one measure's local moments.
    pub fn local_moments<'a>(&self, tag: MeasureTag, y: &'a [f64]) -> Option<&'a [f64]> {
        self.slot(tag).map(|s| &y[s.range()])
    }

    /// One measure's moments in the (scaled) problem coordinates.
    pub fn moments(&self, tag: MeasureTag, y: &[f64]) -> Option<Vec<f64>> {
        self.slot(tag).map(|s| s.original_moments(&y[s.range()]))
    }

    /// Converts a raw objective value `c . y` to the user's cost units.
    pub fn report_value(&self, raw: f64) -> f64 {
        self.meta.cost_scaling.unscale(raw)
    }

    /// Largest block side.
    pub fn max_block_size(&self) -> usize {
        self.psd_blocks.iter().map(PsdBlockSpec::size).max().unwrap_or(0)
    }

    pub fn to_conic(&self) -> ConicProgram {
        let offset = |tag: MeasureTag| self.slot(tag).expect("block measure present").offset;
        let blocks = self
            .psd_blocks
            .iter()
            .map(|b| {
                let off = offset(b.measure.expect("tagged block"));
                let mut coeffs = Vec::new();
                for (i, j, f) in b.upper_entries() {
                    for (id, c) in f.terms() {
                        coeffs.push((id + off, SymEntry { row: i, col: j, value: c }));
                    }
                }
                PsdBlock::new(b.size(), Vec::new(), coeffs)
            })
            .collect();
        let eqs = self.equalities.iter().map(|e| (e.form.terms().collect(), e.rhs)).collect();
        ConicProgram::new(self.nvars(), self.objective.terms().collect(), eqs, blocks)
            .expect("well-formed by construction")
    }
}

fn place(mut s: MeasureSlot, offset: &mut usize) -> MeasureSlot {
    s.offset = *offset;
    *offset += s.basis.len();
    s
}

/// Builds the relaxation matching `problem.risk`.
pub fn build_relaxation(problem: &RiskProblem, k: u32) -> Result<MomentRelaxation, MomentError> {
    build(problem, k, crate::par::available())
}

/// [`build_relaxation`] with explicit control over row-assembly threading.
pub fn build_relaxation_with(problem: &RiskProblem, k: u32, parallel: bool) -> Result<MomentRelaxation, MomentError> {
    build(problem, k, parallel)
}

/// Degree-`k` relaxation of the windowed-mean problem (maximize
/// `L_{y+}(p) / h`). Uses the mean objective whatever `problem.risk` says.
pub fn build_mean_relaxation(problem: &RiskProblem, k: u32) -> Result<MomentRelaxation, MomentError> {
    let mut p = problem.clone();
    p.risk = RiskKind::Mean;
    build(&p, k, crate::par::available())
}

/// Degree-`k` relaxation of the windowed expected-shortfall problem.
pub fn build_es_relaxation(problem: &RiskProblem, k: u32, epsilon: f64) -> Result<MomentRelaxation, MomentError> {
    let mut p = problem.clone();
    p.risk = RiskKind::Es { epsilon };
    build(&p, k, crate::par::available())
}

fn build(problem: &RiskProblem, k: u32, parallel: bool) -> Result<MomentRelaxation, MomentError> {
    let diags = problem.validate();
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(MomentError::Validation(diags.into_iter().filter(|d| d.severity == Severity::Error).collect()));
    }
    if k == 0 {
        return Err(MomentError::OrderTooSmall);
    }
    let scaling = problem.natural_scaling()?;
    let mut sp = problem.rescaled(&scaling)?;
    let (pmin, pmax) = problem.cost_range()?;
    let cost_scaling = {
        let r = 0.5 * (pmax - pmin);
        CostScaling { center: 0.5 * (pmax + pmin), radius: if r > 0.0 { r } else { 1.0 } }
    };
    sp.cost = sp.cost.add_constant(-cost_scaling.center).scale(1.0 / cost_scaling.radius);

    let kt = sp.dynamics.dynamics_degree(k)?;
    let states = sp.states.clone();
    let stx = augmented_vars(&states);
    let mut sx = vec![STOP_VAR.to_string()];
    sx.extend(states.iter().cloned());
    let n = states.len();

    // local charts: s over [h, T], t over its window, x0 over X0's box
    let (t_end, h) = (sp.horizon, sp.window);
    let gap = h + sp.dynamics.dt().unwrap_or(0.0);
    let (cs, rs) = (0.5 * (t_end + h), safe_radius(0.5 * (t_end - h)));
    let s_sx = affine_sub(&sx, STOP_VAR, cs, rs);
    let s_stx = affine_sub(&stx, STOP_VAR, cs, rs);
    let mut x0_chart = vec![s_sx.clone()];
    if let Some(bx) = sp.initial_set.enclosing_box() {
        for (v, (lo, hi)) in states.iter().zip(bx) {
            x0_chart.push(affine_sub(&sx, v, 0.5 * (lo + hi), safe_radius(0.5 * (hi - lo))));
        }
    }
    let t_plus = {
        let u = Polynomial::var(&stx, "t").expect("declared").scale(0.5 * h);
        let sigma = Polynomial::var(&stx, STOP_VAR).expect("declared").scale(rs);
        ("t".to_string(), u.add(&sigma)?.add_constant(cs - 0.5 * h))
    };
    let rt = 0.5 * (t_end - gap);
    let t_minus = affine_sub(&stx, "t", rt.max(0.0), safe_radius(rt));

    let mut offset = 0;
    let mut measures = vec![
        place(MeasureSlot::new(MeasureTag::Initial, MomentBasis::new(&sx, 2 * k), k, x0_chart), &mut offset),
        place(MeasureSlot::new(MeasureTag::Terminal, MomentBasis::new(&sx, 2 * k), k, vec![s_sx]), &mut offset),
        place(
            MeasureSlot::new(MeasureTag::Plus, MomentBasis::new(&stx, 2 * kt), kt, vec![s_stx.clone(), t_plus]),
            &mut offset,
        ),
        place(
            MeasureSlot::new(MeasureTag::Minus, MomentBasis::new(&stx, 2 * kt), kt, vec![s_stx, t_minus]),
            &mut offset,
        ),
    ];
    let delta = match sp.risk {
        RiskKind::Mean => None,
        RiskKind::Es { .. } => {
            let deg_p = sp.cost.degree().max(1);
            let d = kt / deg_p;
            if d < 1 {
                return Err(MomentError::DeltaTooSmall { kt, deg_p });
            }
            let q = names(&["q"]);
            measures
                .push(place(MeasureSlot::new(MeasureTag::Nu, MomentBasis::new(&q, 2 * d), d, Vec::new()), &mut offset));
            measures.push(place(
                MeasureSlot::new(MeasureTag::NuHat, MomentBasis::new(&q, 2 * d), d, Vec::new()),
                &mut offset,
            ));
            Some(d)
        }
    };
    let get = |tag: MeasureTag| measures.iter().find(|m| m.tag == tag).expect("slot");

    // Liouville rows
    let gen = sp.dynamics.generator_on(&stx)?;
    let tests = MultiIndex::all_up_to(n + 2, 2 * k);
    let (y0, yt, yp, ym) =
        (get(MeasureTag::Initial), get(MeasureTag::Terminal), get(MeasureTag::Plus), get(MeasureTag::Minus));
    let rows = crate::par::map_range(tests.len(), parallel, |r| -> Result<Equality, MomentError> {
        let m = &tests[r];
        let e = m.exponents();
        let (a, b) = (e[0], e[1]);
        let mut form = RieszForm::new();
        let mut tau = vec![a + b];
        tau.extend_from_slice(&e[2..]);
        form.add_scaled(&yt.functional(&Polynomial::monomial(&sx, MultiIndex::new(tau), 1.0))?, 1.0, yt.offset);
        if b == 0 {
            let mut init = vec![a];
            init.extend_from_slice(&e[2..]);
            form.add_scaled(&y0.functional(&Polynomial::monomial(&sx, MultiIndex::new(init), 1.0))?, -1.0, y0.offset);
        }
        let lv = gen.apply(&Polynomial::monomial(&stx, m.clone(), 1.0))?;
        form.add_scaled(&yp.functional(&lv)?, -1.0, yp.offset);
        form.add_scaled(&ym.functional(&lv)?, -1.0, ym.offset);
        Ok(Equality { form, rhs: 0.0, kind: EqualityKind::Liouville(e.to_vec()) })
    });
    let mut equalities = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    equalities.push(Equality {
        form: RieszForm::from_terms([(y0.offset, 1.0)]),
        rhs: 1.0,
        kind: EqualityKind::InitialMass,
    });
    equalities.push(Equality {
        form: RieszForm::from_terms([(yp.offset, 1.0)]),
        rhs: sp.window,
        kind: EqualityKind::WindowMass,
    });

    let cost_plus = yp.functional(&sp.cost.embed(&stx)?)?;
    let objective = match (sp.risk, delta) {
        (RiskKind::Es { epsilon }, Some(d)) => {
            let (nu, nuh) = (get(MeasureTag::Nu), get(MeasureTag::NuHat));
            equalities.push(Equality {
                form: RieszForm::from_terms([(nu.offset, 1.0)]),
                rhs: 1.0,
                kind: EqualityKind::TailMass,
            });
            let cost = sp.cost.embed(&stx)?;
            let mut power = Polynomial::constant(&stx, 1.0);
            for l in 0..=2 * d {
                let mut form = RieszForm::new();
                form.add_scaled(&yp.functional(&power)?, 1.0 / sp.window, yp.offset);
                let ql = Polynomial::monomial(&names(&["q"]), MultiIndex::new(vec![l]), 1.0);
                form.add_scaled(&nu.functional(&ql)?, -epsilon, nu.offset);
                form.add_scaled(&nuh.functional(&ql)?, -1.0, nuh.offset);
                equalities.push(Equality { form, rhs: 0.0, kind: EqualityKind::TailMoment(l) });
                power = power.mul(&cost)?;
            }
            RieszForm::from_terms([(nu.offset + 1, 1.0)])
        }
        _ => {
            let mut f = RieszForm::new();
            f.add_scaled(&cost_plus, 1.0 / sp.window, yp.offset);
            f
        }
    };

    // PSD blocks
    let tp = temporal_polynomials(&sp);
    let x_guards = sp.state_set.guards();
    let x0_guards = sp.initial_set.guards();
    let mut blocks = Vec::new();
    let mut push = |m: &MeasureSlot, guard: &Polynomial, label: &str| -> Result<(), MomentError> {
        let g = m.local_guard(guard)?;
        if localizing_order(m.order, &g).is_none() {
            return Ok(());
        }
        let mut b = localizing_block(&m.basis, &g, m.order)?;
        b.measure = Some(m.tag);
        b.label = label.to_string();
        blocks.push(b);
        Ok(())
    };
    let one = Polynomial::constant(&names(&[]), 1.0);
    for (m, set_guards, set_name) in
        [(y0, &x0_guards, "X0"), (yt, &x_guards, "X"), (yp, &x_guards, "X"), (ym, &x_guards, "X")]
    {
        push(m, &one, "moment")?;
        push(m, &tp.g_h, "g_h")?;
        for (i, g) in set_guards.iter().enumerate() {
            push(m, g, &format!("{set_name}[{i}]"))?;
        }
    }
    push(yp, &tp.g_plus, "g+")?;
    push(ym, &tp.g_minus, "g-")?;
    if delta.is_some() {
        let q = names(&["q"]);
        let g_p = Polynomial::parse("1 - q^2", &q)?;
        for tag in [MeasureTag::Nu, MeasureTag::NuHat] {
            push(get(tag), &one, "moment")?;
            push(get(tag), &g_p, "g_p")?;
        }
    }

    let mut rel = MomentRelaxation {
        objective,
        equalities,
        psd_blocks: blocks,
        meta: RelaxationMeta {
            name: problem.name.clone(),
            states,
            k,
            k_tilde: kt,
            delta,
            risk: sp.risk,
            scaling,
            cost_scaling,
            horizon: sp.horizon,
            window: sp.window,
            dt: sp.dynamics.dt(),
            cost_range: (pmin, pmax),
            hash: String::new(),
        },
        measures,
        scaled_problem: sp,
    };
    rel.meta.hash = rel.to_conic().hash();
    Ok(rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_problem;

    #[test]
    fn temporal_examples() {
        let mut p = load_problem("oscillator").unwrap();
        let tp = temporal_polynomials(&p);
        assert_eq!(tp.g_h.evaluate(&[3.0]).unwrap(), 3.0);
        for s in [1.5, 2.0, 4.7] {
            assert_eq!(tp.g_plus.evaluate(&[s, s]).unwrap(), 0.0);
            assert!(tp.g_plus.evaluate(&[s, s - 1.5]).unwrap().abs() < 1e-12);
        }
        p.window = 1.0;
        p.dynamics = crate::model::Dynamics::discrete(
            &p.states,
            vec![Polynomial::var(&p.states, "x1").unwrap(), Polynomial::var(&p.states, "x2").unwrap()],
            Vec::new(),
            0.25,
        )
        .unwrap();
        let tp = temporal_polynomials(&p);
        assert_eq!(tp.g_minus.evaluate(&[3.0, 0.0]).unwrap(), 0.0);
        assert!(tp.g_minus.evaluate(&[3.0, 1.75]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mean_relaxation_shape() {
        let p = load_problem("oscillator").unwrap();
        let r = build_mean_relaxation(&p, 2).unwrap();
        assert_eq!(r.meta.k_tilde, 3);
        // (s, x1, x2) to degree 4; (s, t, x1, x2) to degree 6
        assert_eq!(r.nvars(), 2 * 35 + 2 * 210);
        // Liouville rows over (s, t, x1, x2) to degree 4, plus two masses
        assert_eq!(r.equalities.len(), 70 + 2);
        let biggest = r.psd_blocks.iter().filter(|b| b.measure == Some(MeasureTag::Plus)).map(|b| b.size()).max();
        assert_eq!(biggest, Some(35));
        assert_eq!(r.max_block_size(), 35);
        let first = &r.equalities[0];
        assert_eq!(first.kind, EqualityKind::Liouville(vec![0, 0, 0, 0]));
        let yt = r.slot(MeasureTag::Terminal).unwrap().offset;
        assert_eq!(first.form, RieszForm::from_terms([(yt, 1.0), (0, -1.0)]));
    }

    #[test]
    fn assembly_is_deterministic() {
        let p = load_problem("oscillator").unwrap();
        let a = build_es_relaxation(&p, 2, 0.15).unwrap();
        let b = build_es_relaxation(&p, 2, 0.15).unwrap();
        assert_eq!(a.to_conic(), b.to_conic());
        assert_eq!(a.meta.hash, b.meta.hash);
        assert_eq!(a.meta.delta, Some(3));
    }
}
