//! Moment-vector oracles shared by the integration tests: exact
//! occupation measures of explicit trajectories, built by quadrature.

#![allow(dead_code)]

use winrisk::model::{RiskKind, RiskProblem};
use winrisk::moments::{MeasureSlot, MeasureTag, MomentBasis, MomentRelaxation};

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// `(node, weight)` pairs integrating over `[a, b]`, split into `pieces`.
pub fn quadrature(a: f64, b: f64, pieces: usize) -> Vec<(f64, f64)> {
    let rule = gauss_legendre(20);
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .flat_map(|p| {
            let lo = a + p as f64 * h;
            rule.iter().map(move |&(x, w)| (lo + 0.5 * h * (x + 1.0), 0.5 * h * w))
        })
        .collect()
}

/// A discrete measure: weighted points in a slot's original variables.
pub type Cloud = Vec<(f64, Vec<f64>)>;

/// Solves `A z = r` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut r: Vec<f64>) -> Vec<f64> {
    let n = r.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        r.swap(c, p);
        for i in c + 1..n {
            let f = a[i][c] / a[c][c];
            for j in c..n {
                a[i][j] -= f * a[c][j];
            }
            r[i] -= f * r[c];
        }
    }
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        z[i] = (r[i] - (i + 1..n).map(|j| a[i][j] * z[j]).sum::<f64>()) / a[i][i];
    }
    z
}

/// Local moments of a cloud: each point is pulled back through the slot's
/// affine chart and the local monomials are summed.
pub fn local_moments(slot: &MeasureSlot, cloud: &Cloud) -> Vec<f64> {
    let vars = slot.basis.variables();
    let n = vars.len();
    let image = |z: &[f64]| -> Vec<f64> {
        vars.iter()
            .enumerate()
            .map(|(i, v)| match slot.chart.iter().find(|(name, _)| name == v) {
                Some((_, p)) => p.evaluate(z).unwrap(),
                None => z[i],
            })
            .collect()
    };
    let b = image(&vec![0.0; n]);
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut e = vec![0.0; n];
                    e[j] = 1.0;
                    image(&e)[i] - b[i]
                })
                .collect()
        })
        .collect();
    let mut y = vec![0.0; slot.basis.len()];
    for (w, x) in cloud {
        let z = solve_dense(a.clone(), x.iter().zip(&b).map(|(x, b)| x - b).collect());
        for (yi, m) in y.iter_mut().zip(slot.basis.monomials()) {
            *yi += w * m.exponents().iter().zip(&z).map(|(&e, &zi)| zi.powi(e as i32)).product::<f64>();
        }
    }
    y
}

/// Direct moments of a cloud in its own coordinates.
pub fn plain_moments(basis: &MomentBasis, cloud: &Cloud) -> Vec<f64> {
    basis
        .monomials()
        .iter()
        .map(|m| {
            cloud
                .iter()
                .map(|(w, x)| w * m.exponents().iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product::<f64>())
                .sum()
        })
        .collect()
}

/// Occupation measures of one trajectory `x(t)` (original units) stopped
/// at `s_star`, expressed in the relaxation's scaled coordinates.
pub fn trajectory_vector(
    rel: &MomentRelaxation,
    problem: &RiskProblem,
    s_star: f64,
    x: &dyn Fn(f64) -> Vec<f64>,
) -> Vec<f64> {
    let sc = &rel.meta.scaling;
    let tau = sc.time_scale;
    let h = problem.window;
    let scaled = |t: f64| sc.scale_state(&x(t));
    let s = s_star / tau;
    let point = |head: &[f64], t: f64| -> Vec<f64> { head.iter().copied().chain(scaled(t)).collect() };
    let occupation = |a: f64, b: f64| -> Cloud {
        if b - a <= 0.0 {
            return Vec::new();
        }
        quadrature(a, b, 8).into_iter().map(|(t, w)| (w / tau, point(&[s, t / tau], t))).collect()
    };
    let mut clouds = vec![
        (MeasureTag::Initial, vec![(1.0, point(&[s], 0.0))]),
        (MeasureTag::Terminal, vec![(1.0, point(&[s], s_star))]),
        (MeasureTag::Plus, occupation(s_star - h, s_star)),
        (MeasureTag::Minus, occupation(0.0, s_star - h)),
    ];
    if let RiskKind::Es { epsilon } = rel.meta.risk {
        // pushforward of the normalized window occupation through the cost
        let cost = &rel.scaled_problem.cost;
        let q: Cloud = occupation(s_star - h, s_star)
            .into_iter()
            .map(|(w, p)| (w / rel.meta.window, vec![cost.evaluate(&p[2..]).unwrap()]))
            .collect();
        // nu = pushforward and nuhat = (1 - epsilon) * pushforward add up
        // to the pushforward with the required weights
        clouds.push((MeasureTag::Nu, q.clone()));
        clouds.push((MeasureTag::NuHat, q.into_iter().map(|(w, p)| ((1.0 - epsilon) * w, p)).collect()));
    }
    let mut y = vec![0.0; rel.nvars()];
    for (tag, cloud) in clouds {
        let slot = rel.slot(tag).unwrap();
        let local = local_moments(slot, &cloud);
        let direct = plain_moments(&slot.basis, &cloud);
        let back = slot.original_moments(&local);
        for (a, b) in back.iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{tag}: chart round trip {a} vs {b}");
        }
        y[slot.range()].copy_from_slice(&local);
    }
    y
}

pub fn worst_equality(rel: &MomentRelaxation, y: &[f64]) -> f64 {
    rel.equalities.iter().map(|e| (e.form.evaluate(y) - e.rhs).abs()).fold(0.0, f64::max)
}
