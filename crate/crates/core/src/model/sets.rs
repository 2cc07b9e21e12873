use serde::{Deserialize, Serialize};

use crate::poly::{MultiIndex, Polynomial};

/// Euclidean ball `{x : |x - center| <= radius}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Basic semialgebraic set `{x : g_i(x) >= 0}`.
///
/// Box and ball descriptors are expanded into constraint polynomials at
/// construction and also retained so that an enclosing box is available for
/// scaling, interval bounds and rejection sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct SemialgebraicSet {
    variables: Vec<String>,
    constraints: Vec<Polynomial>,
    bounds: Option<Vec<(f64, f64)>>,
    ball: Option<Ball>,
    ball_radius: Option<f64>,
}

impl SemialgebraicSet {
    pub fn new(variables: &[String]) -> Self {
        SemialgebraicSet {
            variables: variables.to_vec(),
            constraints: Vec::new(),
            bounds: None,
            ball: None,
            ball_radius: None,
        }
    }

    /// Adds `lo_i <= x_i <= hi_i` as `(x_i - lo_i)(hi_i - x_i) >= 0`.
    pub fn with_box(mut self, bounds: &[(f64, f64)]) -> Self {
        assert_eq!(bounds.len(), self.variables.len(), "one interval per variable");
        let n = self.variables.len();
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            let x = Polynomial::monomial(&self.variables, MultiIndex::unit(n, i), 1.0);
            let g = x.add_constant(-lo).mul(&x.scale(-1.0).add_constant(hi)).expect("same variables");
            self.constraints.push(g);
        }
        self.bounds = Some(match self.bounds.take() {
            None => bounds.to_vec(),
            Some(old) => old.iter().zip(bounds).map(|(a, b)| (a.0.max(b.0), a.1.min(b.1))).collect(),
        });
        self
    }

    /// Adds `radius^2 - |x - center|^2 >= 0`.
    pub fn with_ball(mut self, center: &[f64], radius: f64) -> Self {
        assert_eq!(center.len(), self.variables.len(), "ball center dimension");
        self.constraints.push(ball_polynomial(&self.variables, center, radius));
        self.ball = Some(Ball { center: center.to_vec(), radius });
        self
    }

    /// Declares the redundant Archimedean constraint `R^2 - |x|^2 >= 0`,
    /// appended by [`guards`](Self::guards).
    pub fn with_ball_radius(mut self, r: f64) -> Self {
        self.ball_radius = Some(r);
        self
    }

    pub fn with_constraint(mut self, g: Polynomial) -> Self {
        self.constraints.push(g);
        self
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Polynomial] {
        &self.constraints
    }

    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    pub fn ball(&self) -> Option<&Ball> {
        self.ball.as_ref()
    }

    pub fn ball_radius(&self) -> Option<f64> {
        self.ball_radius
    }

    /// Constraint polynomials handed to the relaxation, including the
    /// Archimedean ball when a radius was declared.
    pub fn guards(&self) -> Vec<Polynomial> {
        let mut out = self.constraints.clone();
        if let Some(r) = self.ball_radius {
            out.push(ball_polynomial(&self.variables, &vec![0.0; self.variables.len()], r));
        }
        out
    }

    /// True when some compact descriptor (box, ball or radius) is present.
    pub fn is_compact_description(&self) -> bool {
        self.bounds.is_some() || self.ball.is_some() || self.ball_radius.is_some()
    }

    /// Smallest axis-aligned box containing every compact descriptor.
    pub fn enclosing_box(&self) -> Option<Vec<(f64, f64)>> {
        let n = self.variables.len();
        let mut acc: Option<Vec<(f64, f64)>> = None;
        let mut meet = |b: Vec<(f64, f64)>| {
            acc = Some(match acc.take() {
                None => b,
                Some(a) => a.iter().zip(&b).map(|(x, y)| (x.0.max(y.0), x.1.min(y.1))).collect(),
            });
        };
        if let Some(b) = &self.bounds {
            meet(b.clone());
        }
        if let Some(ball) = &self.ball {
            meet(ball.center.iter().map(|c| (c - ball.radius, c + ball.radius)).collect());
        }
        if let Some(r) = self.ball_radius {
            meet(vec![(-r, r); n]);
        }
        acc
    }

    /// Whether `x` satisfies every guard (with a small absolute slack).
    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        self.guards().iter().all(|g| g.eval_unchecked(x) >= -slack)
    }

    /// Applies the affine substitution `x_i = center_i + radius_i * x'_i`.
    /// Guards are normalized to unit max-coefficient; descriptors become the
    /// transformed enclosing box.
    pub fn affine_image(&self, center: &[f64], radius: &[f64]) -> SemialgebraicSet {
        let n = self.variables.len();
        let subs: Vec<(String, Polynomial)> = (0..n)
            .map(|i| {
                let x = Polynomial::monomial(&self.variables, MultiIndex::unit(n, i), radius[i]);
                (self.variables[i].clone(), x.add_constant(center[i]))
            })
            .collect();
        let constraints = self
            .guards()
            .iter()
            .map(|g| {
                let h = g.substitute_many(&subs).expect("substitution over own variables");
                let m = h.max_abs_coefficient();
                if m > 0.0 {
                    h.scale(1.0 / m)
                } else {
                    h
                }
            })
            .collect();
        let bounds = self.enclosing_box().map(|b| {
            b.iter()
                .enumerate()
                .map(|(i, &(lo, hi))| ((lo - center[i]) / radius[i], (hi - center[i]) / radius[i]))
                .collect()
        });
        SemialgebraicSet { variables: self.variables.clone(), constraints, bounds, ball: None, ball_radius: None }
    }
}

fn ball_polynomial(vars: &[String], center: &[f64], radius: f64) -> Polynomial {
    let n = vars.len();
    let mut g = Polynomial::constant(vars, radius * radius);
    for (i, &c) in center.iter().enumerate() {
        let d = Polynomial::monomial(vars, MultiIndex::unit(n, i), 1.0).add_constant(-c);
        g = g.sub(&d.mul(&d).expect("same variables")).expect("same variables");
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::names;

    #[test]
    fn box_guards_and_enclosure() {
        let s = SemialgebraicSet::new(&names(&["x", "y"])).with_box(&[(-1.0, 2.0), (0.0, 1.0)]);
        assert_eq!(s.guards().len(), 2);
        assert!(s.contains(&[1.5, 0.5], 0.0));
        assert!(!s.contains(&[2.5, 0.5], 0.0));
        assert_eq!(s.enclosing_box().unwrap(), vec![(-1.0, 2.0), (0.0, 1.0)]);
    }

    #[test]
    fn ball_and_radius() {
        let s = SemialgebraicSet::new(&names(&["x", "y"])).with_ball(&[0.0, 0.7], 0.1);
        assert!(s.contains(&[0.05, 0.72], 0.0));
        assert!(!s.contains(&[0.2, 0.7], 0.0));
        let b = s.enclosing_box().unwrap();
        assert!((b[1].0 - 0.6).abs() < 1e-12 && (b[1].1 - 0.8).abs() < 1e-12);
        let r = SemialgebraicSet::new(&names(&["x"])).with_ball_radius(2.0);
        assert_eq!(r.constraints().len(), 0);
        assert_eq!(r.guards().len(), 1);
        assert_eq!(r.enclosing_box().unwrap(), vec![(-2.0, 2.0)]);
    }

    #[test]
    fn affine_image_maps_box_to_unit() {
        let s = SemialgebraicSet::new(&names(&["x"])).with_box(&[(-0.5, 2.5)]);
        let t = s.affine_image(&[1.0], &[1.5]);
        assert_eq!(t.enclosing_box().unwrap(), vec![(-1.0, 1.0)]);
        assert!(t.contains(&[0.99], 0.0));
        assert!(!t.contains(&[1.01], 0.0));
    }
}
