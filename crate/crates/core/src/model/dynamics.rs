use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::poly::{MultiIndex, Polynomial};

pub const TIME_VAR: &str = "t";
pub const STOP_VAR: &str = "s";

/// Truncated moment sequence `E[lambda^j]`, `j = 0..=D`, of a scalar noise law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseMoments {
    moments: Vec<f64>,
}

impl NoiseMoments {
    /// Validates `m_0 = 1` and positive semidefiniteness of the Hankel matrix
    /// `[m_{i+j}]_{i+j <= D}`.
    pub fn new(moments: Vec<f64>) -> Result<Self, ModelError> {
        if moments.is_empty() || (moments[0] - 1.0).abs() > 1e-12 {
            return Err(ModelError::Noise("the zeroth noise moment must equal 1".into()));
        }
        let half = (moments.len() - 1) / 2;
        let n = half + 1;
        let hankel = faer::Mat::<f64>::from_fn(n, n, |i, j| moments[i + j]);
        let eig = hankel
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|_| ModelError::Noise("Hankel eigen-decomposition failed".into()))?;
        let top = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(&min) = eig.iter().min_by(|a, b| a.total_cmp(b)) {
            if min < -1e-9 * top.max(1.0) {
                return Err(ModelError::Noise(format!(
                    "noise moments are not a valid moment sequence (Hankel eigenvalue {min:.3e})"
                )));
            }
        }
        Ok(NoiseMoments { moments })
    }

    pub fn max_degree(&self) -> usize {
        self.moments.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.moments
    }
}

/// A sampling law for a discrete-time noise channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLaw {
    Finite { values: Vec<f64>, probabilities: Vec<f64> },
    Uniform { low: f64, high: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl NoiseLaw {
    /// Analytic raw moments `E[lambda^j]` for `j = 0..=degree`.
    pub fn moments(&self, degree: usize) -> Vec<f64> {
        match self {
            NoiseLaw::Finite { values, probabilities } => (0..=degree)
                .map(|j| values.iter().zip(probabilities).map(|(v, p)| p * v.powi(j as i32)).sum())
                .collect(),
            NoiseLaw::Uniform { low, high } => (0..=degree)
                .map(|j| {
                    if high == low {
                        low.powi(j as i32)
                    } else {
                        (high.powi(j as i32 + 1) - low.powi(j as i32 + 1)) / ((j as f64 + 1.0) * (high - low))
                    }
                })
                .collect(),
            NoiseLaw::Gaussian { mean, std } => {
                // E[X^j] = sum_i C(j, 2i) mean^{j-2i} std^{2i} (2i-1)!!
                (0..=degree)
                    .map(|j| {
                        let mut acc = 0.0;
                        let mut binom = 1.0;
                        let mut dfact = 1.0;
                        for k in 0..=j {
                            if k > 0 {
                                binom *= (j - k + 1) as f64 / k as f64;
                            }
                            if k % 2 == 0 {
                                if k >= 2 {
                                    dfact *= (k - 1) as f64;
                                }
                                acc += binom * mean.powi((j - k) as i32) * std.powi(k as i32) * dfact;
                            }
                        }
                        acc
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseChannel {
    pub variable: String,
    pub moments: NoiseMoments,
    pub law: Option<NoiseLaw>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DynamicsKind {
    /// `dx = f(t,x) dt + g(t,x) dW`, with `g` an `n x w` matrix.
    Continuous { drift: Vec<Polynomial>, diffusion: Vec<Vec<Polynomial>> },
    /// `x[t+dt] = f(t, x[t], lambda[t])` with i.i.d. noise channels.
    Discrete { update: Vec<Polynomial>, noise: Vec<NoiseChannel>, dt: f64 },
}

/// Process dynamics over the state variables. Drift and diffusion entries are
/// polynomials over `(t, x_1..x_n)`; discrete updates additionally use the
/// noise variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics {
    states: Vec<String>,
    kind: DynamicsKind,
}

impl Dynamics {
    pub fn continuous(
        states: &[String],
        drift: Vec<Polynomial>,
        diffusion: Vec<Vec<Polynomial>>,
    ) -> Result<Self, ModelError> {
        let n = states.len();
        if drift.len() != n {
            return Err(ModelError::Dimension(format!("drift has {} rows for {n} states", drift.len())));
        }
        if !diffusion.is_empty() && diffusion.len() != n {
            return Err(ModelError::Dimension(format!("diffusion has {} rows for {n} states", diffusion.len())));
        }
        if let Some(w) = diffusion.first().map(Vec::len) {
            if diffusion.iter().any(|r| r.len() != w) {
                return Err(ModelError::Dimension("diffusion rows have unequal lengths".into()));
            }
        }
        let tx = time_state_vars(states);
        let drift = drift.iter().map(|p| p.embed(&tx)).collect::<Result<Vec<_>, _>>()?;
        let diffusion = diffusion
            .iter()
            .map(|row| row.iter().map(|p| p.embed(&tx)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dynamics { states: states.to_vec(), kind: DynamicsKind::Continuous { drift, diffusion } })
    }

    pub fn discrete(
        states: &[String],
        update: Vec<Polynomial>,
        noise: Vec<NoiseChannel>,
        dt: f64,
    ) -> Result<Self, ModelError> {
        if update.len() != states.len() {
            return Err(ModelError::Dimension(format!("update has {} rows for {} states", update.len(), states.len())));
        }
        if !(dt > 0.0) {
            return Err(ModelError::Dimension("dt must be positive".into()));
        }
        let mut vars = time_state_vars(states);
        vars.extend(noise.iter().map(|c| c.variable.clone()));
        let update = update.iter().map(|p| p.embed(&vars)).collect::<Result<Vec<_>, _>>()?;
        Ok(Dynamics { states: states.to_vec(), kind: DynamicsKind::Discrete { update, noise, dt } })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn kind(&self) -> &DynamicsKind {
        &self.kind
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, DynamicsKind::Discrete { .. })
    }

    pub fn dt(&self) -> Option<f64> {
        match &self.kind {
            DynamicsKind::Discrete { dt, .. } => Some(*dt),
            DynamicsKind::Continuous { .. } => None,
        }
    }

    /// Whether any diffusion entry is nonzero (continuous) or any noise
    /// variable enters the update (discrete).
    pub fn is_stochastic(&self) -> bool {
        match &self.kind {
            DynamicsKind::Continuous { diffusion, .. } => diffusion.iter().flatten().any(|g| !g.is_zero()),
            DynamicsKind::Discrete { update, noise, .. } => {
                noise.iter().any(|c| update.iter().any(|u| !u.is_free_of(&c.variable)))
            }
        }
    }

    /// Prepares the generator for test functions over `vars`, which must
    /// contain `t` and every state; other variables (such as the stopping
    /// time `s`) are held constant.
    pub fn generator_on(&self, vars: &[String]) -> Result<Generator, ModelError> {
        for v in std::iter::once(&TIME_VAR.to_string()).chain(self.states.iter()) {
            if !vars.contains(v) {
                return Err(ModelError::Poly(crate::poly::PolyError::UnknownVariable(v.clone())));
            }
        }
        let op = match &self.kind {
            DynamicsKind::Continuous { drift, diffusion } => {
                let drift = drift.iter().map(|p| p.embed(vars)).collect::<Result<Vec<_>, _>>()?;
                let n = self.states.len();
                // a = g g^T
                let mut a = vec![vec![Polynomial::zero(vars); n]; n];
                let g: Vec<Vec<Polynomial>> = diffusion
                    .iter()
                    .map(|row| row.iter().map(|p| p.embed(vars)).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<_, _>>()?;
                for i in 0..g.len() {
                    for j in 0..g.len() {
                        for c in 0..g[i].len() {
                            a[i][j] = a[i][j].add(&g[i][c].mul(&g[j][c])?)?;
                        }
                    }
                }
                GenOp::Continuous { drift, a }
            }
            DynamicsKind::Discrete { update, noise, dt } => GenOp::Discrete {
                update: update.clone(),
                noise: noise.iter().map(|c| (c.variable.clone(), c.moments.values().to_vec())).collect(),
                dt: *dt,
            },
        };
        let idx = |name: &str| vars.iter().position(|v| v == name).unwrap();
        Ok(Generator {
            vars: vars.to_vec(),
            time: idx(TIME_VAR),
            states: self.states.iter().map(|s| idx(s)).collect(),
            op,
        })
    }

    /// Applies the generator to `v`, a polynomial over `(t, x)` or over any
    /// superset holding extra constant parameters.
    pub fn apply_generator(&self, v: &Polynomial) -> Result<Polynomial, ModelError> {
        self.generator_on(v.variables())?.apply(v)
    }

    /// Generator of the augmented process in `(s, t, x)` where `s` is frozen.
    pub fn apply_augmented_generator(&self, v: &Polynomial) -> Result<Polynomial, ModelError> {
        if !v.variables().iter().any(|x| x == STOP_VAR) {
            return Err(ModelError::Poly(crate::poly::PolyError::UnknownVariable(STOP_VAR.into())));
        }
        self.apply_generator(v)
    }

    /// The dynamics degree: smallest `kt >= k` with `deg(L v) <= 2 kt` for
    /// every `v` of degree at most `2k` in `(s, t, x)`, found by scanning
    /// the monomial basis.
    pub fn dynamics_degree(&self, k: u32) -> Result<u32, ModelError> {
        let vars = augmented_vars(&self.states);
        let gen = self.generator_on(&vars)?;
        let mut max_deg = 0;
        for alpha in MultiIndex::all_up_to(vars.len(), 2 * k) {
            let m = Polynomial::monomial(&vars, alpha, 1.0);
            max_deg = max_deg.max(gen.apply(&m)?.degree());
        }
        Ok(k.max(max_deg.div_ceil(2)))
    }

    /// Applies `x = center + radius * x'`, `t = horizon * t'` and returns the
    /// dynamics of the scaled coordinates.
    pub fn rescaled(&self, center: &[f64], radius: &[f64], horizon: f64) -> Result<Dynamics, ModelError> {
        let n = self.states.len();
        let tx = time_state_vars(&self.states);
        let mut subs = vec![(TIME_VAR.to_string(), Polynomial::monomial(&tx, MultiIndex::unit(n + 1, 0), horizon))];
        for i in 0..n {
            let x = Polynomial::monomial(&tx, MultiIndex::unit(n + 1, i + 1), radius[i]).add_constant(center[i]);
            subs.push((self.states[i].clone(), x));
        }
        match &self.kind {
            DynamicsKind::Continuous { drift, diffusion } => {
                let drift = drift
                    .iter()
                    .enumerate()
                    .map(|(i, f)| Ok(f.substitute_many(&subs)?.embed(&tx)?.scale(horizon / radius[i])))
                    .collect::<Result<Vec<_>, ModelError>>()?;
                let diffusion = diffusion
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        row.iter()
                            .map(|g| Ok(g.substitute_many(&subs)?.embed(&tx)?.scale(horizon.sqrt() / radius[i])))
                            .collect::<Result<Vec<_>, ModelError>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Dynamics::continuous(&self.states, drift, diffusion)
            }
            DynamicsKind::Discrete { update, noise, dt } => {
                let mut vars = tx.clone();
                vars.extend(noise.iter().map(|c| c.variable.clone()));
                let update = update
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        Ok(f.substitute_many(&subs)?.embed(&vars)?.add_constant(-center[i]).scale(1.0 / radius[i]))
                    })
                    .collect::<Result<Vec<_>, ModelError>>()?;
                Dynamics::discrete(&self.states, update, noise.clone(), dt / horizon)
            }
        }
    }
}

/// `(t, x_1..x_n)`.
pub fn time_state_vars(states: &[String]) -> Vec<String> {
    let mut v = vec![TIME_VAR.to_string()];
    v.extend(states.iter().cloned());
    v
}

/// `(s, t, x_1..x_n)`, the fixed global variable order.
pub fn augmented_vars(states: &[String]) -> Vec<String> {
    let mut v = vec![STOP_VAR.to_string(), TIME_VAR.to_string()];
    v.extend(states.iter().cloned());
    v
}

#[derive(Clone, Debug)]
enum GenOp {
    Continuous { drift: Vec<Polynomial>, a: Vec<Vec<Polynomial>> },
    Discrete { update: Vec<Polynomial>, noise: Vec<(String, Vec<f64>)>, dt: f64 },
}

/// Generator specialized to one ambient variable list.
#[derive(Clone, Debug)]
pub struct Generator {
    vars: Vec<String>,
    time: usize,
    states: Vec<usize>,
    op: GenOp,
}

impl Generator {
    pub fn apply(&self, v: &Polynomial) -> Result<Polynomial, ModelError> {
        if v.variables() != self.vars.as_slice() {
            return Err(ModelError::Poly(crate::poly::PolyError::VariableMismatch {
                left: v.variables().to_vec(),
                right: self.vars.clone(),
            }));
        }
        match &self.op {
            GenOp::Continuous { drift, a } => {
                let mut out = v.partial_index(self.time, 1);
                let grads: Vec<Polynomial> = self.states.iter().map(|&i| v.partial_index(i, 1)).collect();
                for (f, dv) in drift.iter().zip(&grads) {
                    if !f.is_zero() && !dv.is_zero() {
                        out = out.add(&f.mul(dv)?)?;
                    }
                }
                for (i, row) in a.iter().enumerate() {
                    for (j, aij) in row.iter().enumerate() {
                        if aij.is_zero() {
                            continue;
                        }
                        let d2 = grads[i].partial_index(self.states[j], 1);
                        if !d2.is_zero() {
                            out = out.add(&aij.mul(&d2)?.scale(0.5))?;
                        }
                    }
                }
                Ok(out)
            }
            GenOp::Discrete { update, noise, dt } => {
                let n = self.vars.len();
                let mut subs = vec![(
                    self.vars[self.time].clone(),
                    Polynomial::monomial(&self.vars, MultiIndex::unit(n, self.time), 1.0).add_constant(*dt),
                )];
                for (k, &i) in self.states.iter().enumerate() {
                    subs.push((self.vars[i].clone(), update[k].clone()));
                }
                let mut shifted = v.substitute_many(&subs)?;
                for (name, m) in noise {
                    if shifted.variables().contains(name) {
                        shifted = shifted.integrate_out(name, m)?.ok_or_else(|| {
                            ModelError::Noise(format!(
                                "noise `{name}` needs moments beyond degree {}",
                                m.len().saturating_sub(1)
                            ))
                        })?;
                    }
                }
                let shifted = shifted.embed(&self.vars)?;
                Ok(shifted.sub(v)?.scale(1.0 / dt))
            }
        }
    }
}
