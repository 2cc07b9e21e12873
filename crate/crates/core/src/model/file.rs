//! TOML problem files.
//!
//! ```toml
//! name = "oscillator"
//! states = ["x1", "x2"]
//! horizon = 5.0
//! window = 1.5
//! cost = "x2"
//!
//! [risk]
//! kind = "es"          # or "mean"
//! epsilon = 0.15
//!
//! [state_set]
//! box = [[-0.5, 2.5], [-2.0, 1.5]]
//! constraints = []     # extra polynomial strings g(x) >= 0
//! # ball_radius = 3.0  # redundant Archimedean ball |x| <= R
//!
//! [initial_set]
//! ball = { center = [0.0, 0.7], radius = 0.1 }
//!
//! [dynamics]
//! kind = "continuous"
//! drift = ["...", "..."]          # polynomials in (t, x)
//! diffusion = [["0.1"], ["0"]]    # n rows, one column per Wiener channel
//! ```
//!
//! Discrete dynamics use `kind = "discrete"`, `dt`, `update` (polynomials in
//! `t`, the states and the noise variables) and `[[dynamics.noise]]` tables
//! with `variable`, `moments` and an optional sampling `law`.

use serde::Deserialize;

use crate::model::dynamics::{time_state_vars, Dynamics, NoiseChannel, NoiseLaw, NoiseMoments};
use crate::model::problem::{RiskKind, RiskProblem};
use crate::model::sets::SemialgebraicSet;
use crate::poly::Polynomial;

#[derive(Debug, thiserror::Error)]
#[error("{origin}:{line}: {message}")]
pub struct ProblemFileError {
    pub origin: String,
    pub line: usize,
    pub message: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    name: Option<String>,
    states: Vec<String>,
    horizon: f64,
    window: f64,
    cost: String,
    risk: Option<RiskDoc>,
    state_set: SetDoc,
    initial_set: SetDoc,
    dynamics: DynDoc,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RiskDoc {
    kind: String,
    epsilon: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BallDoc {
    center: Vec<f64>,
    radius: f64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SetDoc {
    #[serde(rename = "box")]
    bounds: Option<Vec<[f64; 2]>>,
    ball: Option<BallDoc>,
    ball_radius: Option<f64>,
    #[serde(default)]
    constraints: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDoc {
    variable: String,
    moments: Option<Vec<f64>>,
    moment_degree: Option<usize>,
    law: Option<NoiseLaw>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DynDoc {
    kind: String,
    drift: Option<Vec<String>>,
    diffusion: Option<Vec<Vec<String>>>,
    update: Option<Vec<String>>,
    dt: Option<f64>,
    #[serde(default)]
    noise: Vec<NoiseDoc>,
}

struct Ctx<'a> {
    origin: &'a str,
    text: &'a str,
}

impl Ctx<'_> {
    fn line_of(&self, needle: &str) -> usize {
        self.text.lines().position(|l| l.contains(needle)).map(|i| i + 1).unwrap_or(1)
    }

    fn err(&self, needle: &str, message: impl Into<String>) -> ProblemFileError {
        ProblemFileError { origin: self.origin.to_string(), line: self.line_of(needle), message: message.into() }
    }

    fn poly(&self, src: &str, vars: &[String], what: &str) -> Result<Polynomial, ProblemFileError> {
        Polynomial::parse(src, vars).map_err(|e| self.err(src, format!("{what}: {e}")))
    }

    fn set(&self, doc: &SetDoc, states: &[String], key: &str) -> Result<SemialgebraicSet, ProblemFileError> {
        let n = states.len();
        let mut set = SemialgebraicSet::new(states);
        if let Some(b) = &doc.bounds {
            if b.len() != n {
                return Err(self.err(&format!("[{key}]"), format!("{key}.box needs {n} intervals")));
            }
            if b.iter().any(|[lo, hi]| !(lo <= hi)) {
                return Err(self.err(&format!("[{key}]"), format!("{key}.box has an inverted interval")));
            }
            let pairs: Vec<(f64, f64)> = b.iter().map(|[lo, hi]| (*lo, *hi)).collect();
            set = set.with_box(&pairs);
        }
        if let Some(ball) = &doc.ball {
            if ball.center.len() != n || !(ball.radius > 0.0) {
                return Err(self.err(
                    &format!("[{key}]"),
                    format!("{key}.ball needs a {n}-dimensional center and positive radius"),
                ));
            }
            set = set.with_ball(&ball.center, ball.radius);
        }
        if let Some(r) = doc.ball_radius {
            if !(r > 0.0) {
                return Err(self.err("ball_radius", "ball_radius must be positive"));
            }
            set = set.with_ball_radius(r);
        }
        for c in &doc.constraints {
            set = set.with_constraint(self.poly(c, states, &format!("{key} constraint"))?);
        }
        Ok(set)
    }
}

fn check_ident(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses a problem document. `origin` labels error messages (usually the
/// file path).
pub fn parse_problem(text: &str, origin: &str) -> Result<RiskProblem, ProblemFileError> {
    let ctx = Ctx { origin, text };
    let doc: FileDoc = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(1);
        ProblemFileError { origin: origin.to_string(), line, message: e.message().to_string() }
    })?;
    let states = doc.states.clone();
    if states.is_empty() {
        return Err(ctx.err("states", "at least one state variable is required"));
    }
    for s in &states {
        if !check_ident(s) || s == "s" || s == "t" {
            return Err(ctx.err("states", format!("invalid state variable name `{s}` (`s` and `t` are reserved)")));
        }
    }
    let risk = match &doc.risk {
        None => RiskKind::Mean,
        Some(r) => match r.kind.as_str() {
            "mean" => RiskKind::Mean,
            "es" => {
                RiskKind::Es { epsilon: r.epsilon.ok_or_else(|| ctx.err("kind", "risk kind `es` needs `epsilon`"))? }
            }
            other => return Err(ctx.err("kind", format!("unknown risk kind `{other}`"))),
        },
    };
    let cost = ctx.poly(&doc.cost, &states, "cost")?;
    let state_set = ctx.set(&doc.state_set, &states, "state_set")?;
    let initial_set = ctx.set(&doc.initial_set, &states, "initial_set")?;
    let tx = time_state_vars(&states);
    let d = &doc.dynamics;
    let dynamics = match d.kind.as_str() {
        "continuous" => {
            let drift = d.drift.as_ref().ok_or_else(|| ctx.err("[dynamics]", "continuous dynamics need `drift`"))?;
            let drift = drift.iter().map(|s| ctx.poly(s, &tx, "drift")).collect::<Result<Vec<_>, _>>()?;
            let diffusion = match &d.diffusion {
                None => Vec::new(),
                Some(rows) => rows
                    .iter()
                    .map(|r| r.iter().map(|s| ctx.poly(s, &tx, "diffusion")).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()?,
            };
            Dynamics::continuous(&states, drift, diffusion).map_err(|e| ctx.err("[dynamics]", e.to_string()))?
        }
        "discrete" => {
            let dt = d.dt.ok_or_else(|| ctx.err("[dynamics]", "discrete dynamics need `dt`"))?;
            let mut vars = tx.clone();
            let mut noise = Vec::new();
            for n in &d.noise {
                if !check_ident(&n.variable) || vars.contains(&n.variable) {
                    return Err(ctx.err(&n.variable, format!("invalid noise variable `{}`", n.variable)));
                }
                vars.push(n.variable.clone());
                let raw = match (&n.moments, &n.law) {
                    (Some(m), _) => m.clone(),
                    (None, Some(law)) => law.moments(n.moment_degree.unwrap_or(8)),
                    (None, None) => {
                        return Err(ctx.err(&n.variable, "noise needs `moments` or a sampling `law`"));
                    }
                };
                let moments = NoiseMoments::new(raw).map_err(|e| ctx.err(&n.variable, e.to_string()))?;
                noise.push(NoiseChannel { variable: n.variable.clone(), moments, law: n.law.clone() });
            }
            let update = d.update.as_ref().ok_or_else(|| ctx.err("[dynamics]", "discrete dynamics need `update`"))?;
            let update = update.iter().map(|s| ctx.poly(s, &vars, "update")).collect::<Result<Vec<_>, _>>()?;
            Dynamics::discrete(&states, update, noise, dt).map_err(|e| ctx.err("[dynamics]", e.to_string()))?
        }
        other => return Err(ctx.err("kind", format!("unknown dynamics kind `{other}`"))),
    };
    Ok(RiskProblem {
        name: doc.name.unwrap_or_else(|| origin.to_string()),
        states,
        state_set,
        initial_set,
        horizon: doc.horizon,
        window: doc.window,
        cost,
        dynamics,
        risk,
    })
}

/// Built-in benchmark instances by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "twist" => Some(include_str!("../../problems/twist.toml")),
        "oscillator" => Some(include_str!("../../problems/oscillator.toml")),
        "stochastic-oscillator" | "stochastic_oscillator" => {
            Some(include_str!("../../problems/stochastic_oscillator.toml"))
        }
        _ => None,
    }
}

pub fn bundled_names() -> &'static [&'static str] {
    &["twist", "oscillator", "stochastic-oscillator"]
}

/// Loads a bundled instance by name, or a problem file from disk.
pub fn load_problem(path_or_name: &str) -> Result<RiskProblem, ProblemFileError> {
    if let Some(text) = bundled(path_or_name) {
        return parse_problem(text, path_or_name);
    }
    let text = std::fs::read_to_string(path_or_name).map_err(|e| ProblemFileError {
        origin: path_or_name.to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_problem(&text, path_or_name)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DISCRETE: &str = r#"
name = "scalar-ar"
states = ["x"]
horizon = 2.0
window = 0.5
cost = "x^2"

[state_set]
box = [[-2.0, 2.0]]

[initial_set]
box = [[-0.5, 0.5]]

[dynamics]
kind = "discrete"
dt = 0.25
update = ["0.9*x + 0.1*w"]

[[dynamics.noise]]
variable = "w"
law = { kind = "finite", values = [-1.0, 1.0], probabilities = [0.5, 0.5] }
moment_degree = 6
"#;

    #[test]
    fn discrete_file_loads() {
        let p = parse_problem(DISCRETE, "inline").unwrap();
        assert!(p.dynamics.is_discrete());
        assert!(p.validate().is_empty(), "{:?}", p.validate());
    }

    #[test]
    fn errors_cite_lines() {
        let bad = DISCRETE.replace("cost = \"x^2\"", "cost = \"y^2\"");
        let e = parse_problem(&bad, "inline").unwrap_err();
        assert_eq!(e.line, 6);
        assert!(e.message.contains("unknown variable"));
        let bad = DISCRETE.replace("window = 0.5", "window = \"wide\"");
        let e = parse_problem(&bad, "inline").unwrap_err();
        assert_eq!(e.line, 5);
    }

    #[test]
    fn bundled_instances_load_and_validate() {
        for name in bundled_names() {
            let p = load_problem(name).unwrap();
            let diags = p.validate();
            assert!(diags.is_empty(), "{name}: {diags:?}");
        }
    }
}
