use serde::{Deserialize, Serialize};

use crate::model::dynamics::{Dynamics, DynamicsKind, NoiseMoments};
use crate::model::sets::SemialgebraicSet;
use crate::model::ModelError;
use crate::poly::{MultiIndex, Polynomial};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskKind {
    Mean,
    /// Expected shortfall at tail level `epsilon`.
    Es {
        epsilon: f64,
    },
}

/// A time-windowed risk analysis instance.
#[derive(Clone, Debug, PartialEq)]
pub struct RiskProblem {
    pub name: String,
    pub states: Vec<String>,
    pub state_set: SemialgebraicSet,
    pub initial_set: SemialgebraicSet,
    pub horizon: f64,
    pub window: f64,
    pub cost: Polynomial,
    pub dynamics: Dynamics,
    pub risk: RiskKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, message: message.into() }
    }

    fn warning(message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, message: message.into() }
    }
}

/// Affine change of coordinates applied before assembling relaxations:
/// `t = time_scale * t'`, `x = state_center + state_radius * x'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub time_scale: f64,
    pub state_center: Vec<f64>,
    pub state_radius: Vec<f64>,
}

impl Scaling {
    pub fn identity(n: usize) -> Self {
        Scaling { time_scale: 1.0, state_center: vec![0.0; n], state_radius: vec![1.0; n] }
    }

    pub fn unscale_state(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().enumerate().map(|(i, x)| self.state_center[i] + self.state_radius[i] * x).collect()
    }

    pub fn scale_state(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, v)| (v - self.state_center[i]) / self.state_radius[i]).collect()
    }
}

fn near_multiple(value: f64, step: f64) -> bool {
    let r = value / step;
    (r - r.round()).abs() < 1e-9 * r.abs().max(1.0)
}

impl RiskProblem {
    pub fn epsilon(&self) -> Option<f64> {
        match self.risk {
            RiskKind::Es { epsilon } => Some(epsilon),
            RiskKind::Mean => None,
        }
    }

    /// Machine-checkable assumption checks; never fails, returns diagnostics.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let n = self.states.len();
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            out.push(Diagnostic::error("horizon T must be positive and finite"));
        }
        if !(self.window > 0.0) {
            out.push(Diagnostic::error("window must be positive"));
        } else if self.window > self.horizon * (1.0 + 1e-12) {
            out.push(Diagnostic::error("window h must not exceed the horizon T"));
        }
        for (label, set) in [("state set X", &self.state_set), ("initial set X0", &self.initial_set)] {
            if set.variables() != self.states.as_slice() {
                out.push(Diagnostic::error(format!("{label} is not expressed over the state variables")));
            }
            if !set.is_compact_description() {
                out.push(Diagnostic::error(format!(
                    "A1: {label} has no box, ball or ball_radius; compactness cannot be established"
                )));
            }
            if let Some(b) = set.enclosing_box() {
                if b.iter().any(|(lo, hi)| !(lo <= hi)) {
                    out.push(Diagnostic::error(format!("{label} has an empty enclosing box")));
                }
            }
        }
        if self.cost.variables() != self.states.as_slice() {
            out.push(Diagnostic::error("A7: cost p must be a polynomial in the state variables only"));
        }
        if self.dynamics.states() != self.states.as_slice() {
            out.push(Diagnostic::error("dynamics state variables differ from the problem's"));
        }
        match self.dynamics.kind() {
            DynamicsKind::Discrete { dt, noise, update } => {
                if !near_multiple(self.horizon, *dt) {
                    out.push(Diagnostic::error("horizon T must be an integer multiple of dt"));
                }
                if !near_multiple(self.window, *dt) {
                    out.push(Diagnostic::error("window h must be an integer multiple of dt"));
                }
                for c in noise {
                    if let Err(e) = NoiseMoments::new(c.moments.values().to_vec()) {
                        out.push(Diagnostic::error(format!("noise `{}`: {e}", c.variable)));
                    }
                    if let Some(law) = &c.law {
                        let m = law.moments(c.moments.max_degree());
                        let worst = m
                            .iter()
                            .zip(c.moments.values())
                            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
                            .fold(0.0, f64::max);
                        if worst > 1e-9 {
                            out.push(Diagnostic::error(format!(
                                "noise `{}`: sampling law moments disagree with the declared moments ({worst:.2e})",
                                c.variable
                            )));
                        }
                    } else {
                        out.push(Diagnostic::warning(format!(
                            "noise `{}` has no sampling law; Monte Carlo is unavailable",
                            c.variable
                        )));
                    }
                }
                if update.len() != n {
                    out.push(Diagnostic::error("update dimension mismatch"));
                }
            }
            DynamicsKind::Continuous { .. } => {}
        }
        if let RiskKind::Es { epsilon } = self.risk {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                out.push(Diagnostic::error("ES level epsilon must lie in (0, 1)"));
            }
        }
        out
    }

    pub fn has_errors(&self) -> bool {
        self.validate().iter().any(|d| d.severity == Severity::Error)
    }

    /// Outer bounds `(p_min, p_max)` on the cost over X by interval
    /// arithmetic on the enclosing box.
    pub fn cost_range(&self) -> Result<(f64, f64), ModelError> {
        let b = self.state_set.enclosing_box().ok_or_else(|| ModelError::Invalid("state set X is unbounded".into()))?;
        Ok(interval_bound(&self.cost, &b))
    }

    /// State/time scaling that maps X's enclosing box onto `[-1,1]^n` and
    /// `[0, T]` onto `[0, 1]`.
    pub fn natural_scaling(&self) -> Result<Scaling, ModelError> {
        let b = self.state_set.enclosing_box().ok_or_else(|| ModelError::Invalid("state set X is unbounded".into()))?;
        let mut center = Vec::new();
        let mut radius = Vec::new();
        for (lo, hi) in b {
            let r = 0.5 * (hi - lo);
            center.push(0.5 * (hi + lo));
            radius.push(if r > 0.0 { r } else { 1.0 });
        }
        Ok(Scaling { time_scale: self.horizon, state_center: center, state_radius: radius })
    }

    /// The problem expressed in scaled coordinates. Cost values are unchanged.
    pub fn rescaled(&self, scaling: &Scaling) -> Result<RiskProblem, ModelError> {
        let n = self.states.len();
        let subs: Vec<(String, Polynomial)> = (0..n)
            .map(|i| {
                let x = Polynomial::monomial(&self.states, MultiIndex::unit(n, i), scaling.state_radius[i])
                    .add_constant(scaling.state_center[i]);
                (self.states[i].clone(), x)
            })
            .collect();
        Ok(RiskProblem {
            name: self.name.clone(),
            states: self.states.clone(),
            state_set: self.state_set.affine_image(&scaling.state_center, &scaling.state_radius),
            initial_set: self.initial_set.affine_image(&scaling.state_center, &scaling.state_radius),
            horizon: self.horizon / scaling.time_scale,
            window: self.window / scaling.time_scale,
            cost: self.cost.substitute_many(&subs)?,
            dynamics: self.dynamics.rescaled(&scaling.state_center, &scaling.state_radius, scaling.time_scale)?,
            risk: self.risk,
        })
    }
}

/// Interval enclosure of a polynomial over a box.
pub fn interval_bound(p: &Polynomial, bounds: &[(f64, f64)]) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (alpha, c) in p.terms() {
        let mut m = (1.0, 1.0);
        for (&e, &(a, b)) in alpha.exponents().iter().zip(bounds) {
            if e == 0 {
                continue;
            }
            let pw = power_interval(a, b, e);
            let cands = [m.0 * pw.0, m.0 * pw.1, m.1 * pw.0, m.1 * pw.1];
            m = (
                cands.iter().copied().fold(f64::INFINITY, f64::min),
                cands.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            );
        }
        let (x, y) = (c * m.0, c * m.1);
        lo += x.min(y);
        hi += x.max(y);
    }
    (lo, hi)
}

fn power_interval(a: f64, b: f64, e: u32) -> (f64, f64) {
    let (pa, pb) = (a.powi(e as i32), b.powi(e as i32));
    if e % 2 == 1 || a >= 0.0 || b <= 0.0 {
        (pa.min(pb), pa.max(pb))
    } else {
        // even power over an interval straddling zero
        (0.0, pa.max(pb))
    }
}
