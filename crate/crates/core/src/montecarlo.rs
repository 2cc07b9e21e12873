//! Trajectory sampling and empirical time-windowed statistics.
//!
//! Paths are simulated on a uniform grid (Euler-Maruyama for SDEs, the exact
//! map for discrete-time processes) and stop at the first grid point outside
//! the state set or at the horizon. Each path draws from its own ChaCha8
//! stream keyed by `(seed, path index)`, so batches do not depend on the
//! thread count.

use std::io::Write;
use std::path::Path as FsPath;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{DynamicsKind, NoiseLaw, RiskProblem};
use crate::poly::Polynomial;

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("invalid sampling option: {0}")]
    Options(String),
    #[error("could not sample the initial set: {0}")]
    InitialSet(String),
    #[error("noise channel `{0}` enters the update but has no sampling law")]
    NoLaw(String),
    #[error("window {window} is not a multiple of the step {dt}")]
    WindowMismatch { window: f64, dt: f64 },
    #[error("empty window")]
    EmptyWindow,
    #[error("empty input")]
    Empty,
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Rejection-sampling attempts allowed per initial point.
const X0_ATTEMPTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub count: usize,
    /// Step for continuous dynamics; discrete dynamics use their own step.
    pub dt: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { count: 1000, dt: 5e-3, seed: 1, parallel: crate::par::available() }
    }
}

/// One sampled path. `states` holds `stop_index + 1` points, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub states: Vec<f64>,
    /// Index of the last simulated point: the first point outside `X`, or
    /// the point at the horizon.
    pub stop_index: usize,
    pub exited: bool,
}

impl SamplePath {
    pub fn point(&self, i: usize, n: usize) -> &[f64] {
        &self.states[i * n..(i + 1) * n]
    }

    /// Last grid index at which the path is still running inside `X`.
    pub fn last_valid(&self) -> Option<usize> {
        if self.exited {
            self.stop_index.checked_sub(1)
        } else {
            Some(self.stop_index)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryBatch {
    pub dt: f64,
    pub seed: u64,
    pub count: usize,
    pub dim: usize,
    pub discrete: bool,
    pub paths: Vec<SamplePath>,
}

impl TrajectoryBatch {
    /// Fraction of paths that left `X` before the horizon.
    pub fn exit_fraction(&self) -> f64 {
        if self.paths.is_empty() {
            return 0.0;
        }
        self.paths.iter().filter(|p| p.exited).count() as f64 / self.paths.len() as f64
    }

    /// Mean stop time over paths.
    pub fn mean_stop_time(&self) -> f64 {
        if self.paths.is_empty() {
            return 0.0;
        }
        self.paths.iter().map(|p| p.stop_index as f64 * self.dt).sum::<f64>() / self.paths.len() as f64
    }
}

fn steps_for(span: f64, dt: f64) -> Option<usize> {
    let r = span / dt;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * r.max(1.0)).then_some(n as usize)
}

fn sample_initial(problem: &RiskProblem, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SampleError> {
    let bx = problem
        .initial_set
        .enclosing_box()
        .ok_or_else(|| SampleError::InitialSet("no box or ball descriptor to sample from".into()))?;
    for _ in 0..X0_ATTEMPTS {
        let x: Vec<f64> = bx.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect();
        if problem.initial_set.contains(&x, 0.0) {
            return Ok(x);
        }
    }
    Err(SampleError::InitialSet(format!("no point accepted after {X0_ATTEMPTS} draws")))
}

enum Noise {
    Law(NoiseLaw),
    Unused,
}

fn draw(law: &NoiseLaw, rng: &mut ChaCha8Rng) -> f64 {
    match law {
        NoiseLaw::Finite { values, probabilities } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (v, p) in values.iter().zip(probabilities) {
                acc += p;
                if u < acc {
                    return *v;
                }
            }
            *values.last().expect("nonempty support")
        }
        NoiseLaw::Uniform { low, high } => {
            if high > low {
                rng.random_range(*low..*high)
            } else {
                *low
            }
        }
        NoiseLaw::Gaussian { mean, std } => Normal::new(*mean, *std).map(|d| d.sample(rng)).unwrap_or(*mean),
    }
}

/// Samples `opts.count` paths of `problem.dynamics` from uniform initial
/// points in `X0`.
pub fn simulate(problem: &RiskProblem, opts: &SampleOptions) -> Result<TrajectoryBatch, SampleError> {
    if opts.count == 0 {
        return Err(SampleError::Options("path count must be positive".into()));
    }
    let n = problem.states.len();
    let (dt, discrete) = match problem.dynamics.dt() {
        Some(d) => (d, true),
        None => {
            if !(opts.dt > 0.0) || !opts.dt.is_finite() {
                return Err(SampleError::Options("dt must be positive".into()));
            }
            (opts.dt, false)
        }
    };
    let steps = steps_for(problem.horizon, dt).unwrap_or((problem.horizon / dt).floor() as usize);
    let noise: Vec<Noise> = match problem.dynamics.kind() {
        DynamicsKind::Discrete { update, noise, .. } => noise
            .iter()
            .map(|c| match (&c.law, update.iter().any(|u| !u.is_free_of(&c.variable))) {
                (Some(l), _) => Ok(Noise::Law(l.clone())),
                (None, false) => Ok(Noise::Unused),
                (None, true) => Err(SampleError::NoLaw(c.variable.clone())),
            })
            .collect::<Result<_, _>>()?,
        DynamicsKind::Continuous { .. } => Vec::new(),
    };
    let x_guards = problem.state_set.guards();
    let inside = |x: &[f64]| x_guards.iter().all(|g| g.evaluate(x).map(|v| v >= 0.0).unwrap_or(false));

    let run = |i: usize| -> Result<SamplePath, SampleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(i as u64);
        let mut x = sample_initial(problem, &mut rng)?;
        let mut states = Vec::with_capacity((steps + 1) * n);
        states.extend_from_slice(&x);
        if !inside(&x) {
            return Ok(SamplePath { states, stop_index: 0, exited: true });
        }
        let mut tx = vec![0.0; n + 1];
        let mut buf = vec![0.0; n + 1 + noise.len()];
        for step in 0..steps {
            let t = step as f64 * dt;
            tx[0] = t;
            tx[1..].copy_from_slice(&x);
            match problem.dynamics.kind() {
                DynamicsKind::Continuous { drift, diffusion } => {
                    let sq = dt.sqrt();
                    let w = diffusion.first().map(Vec::len).unwrap_or(0);
                    let xi: Vec<f64> = (0..w).map(|_| StandardNormal.sample(&mut rng)).collect();
                    for j in 0..n {
                        let mut dx = eval(&drift[j], &tx) * dt;
                        for (c, z) in xi.iter().enumerate() {
                            dx += eval(&diffusion[j][c], &tx) * sq * z;
                        }
                        x[j] += dx;
                    }
                }
                DynamicsKind::Discrete { update, .. } => {
                    buf[..=n].copy_from_slice(&tx);
                    for (c, ch) in noise.iter().enumerate() {
                        buf[n + 1 + c] = match ch {
                            Noise::Law(l) => draw(l, &mut rng),
                            Noise::Unused => 0.0,
                        };
                    }
                    for j in 0..n {
                        x[j] = eval(&update[j], &buf);
                    }
                }
            }
            states.extend_from_slice(&x);
            if !inside(&x) {
                return Ok(SamplePath { states, stop_index: step + 1, exited: true });
            }
        }
        Ok(SamplePath { states, stop_index: steps, exited: false })
    };
    let paths = crate::par::map_range(opts.count, opts.parallel, run).into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(TrajectoryBatch { dt, seed: opts.seed, count: opts.count, dim: n, discrete, paths })
}

fn eval(p: &Polynomial, point: &[f64]) -> f64 {
    p.evaluate(point).expect("dimension checked at construction")
}

/// Which windowed statistic a series holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Es { epsilon: f64 },
}

/// Per-time reductions of a per-path windowed statistic over a batch.
///
/// `times[i]` is the window end; a path contributes at `times[i]` only if
/// it is still running at that time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStatSeries {
    pub statistic: Statistic,
    pub window: f64,
    pub times: Vec<f64>,
    /// Largest per-path value at each time (the validation convention).
    pub values: Vec<f64>,
    /// Cross-path mean of the per-path values.
    pub cross_mean: Vec<f64>,
    /// The statistic of the pooled cross-path window distribution.
    pub pooled: Vec<f64>,
    /// Number of contributing paths.
    pub active: Vec<usize>,
}

impl WindowStatSeries {
    /// Global supremum of the per-path values.
    pub fn sup(&self) -> f64 {
        self.values.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Time at which [`sup`](Self::sup) is attained.
    pub fn argsup(&self) -> Option<f64> {
        let s = self.sup();
        self.values.iter().position(|&v| v == s).map(|i| self.times[i])
    }
}

/// Time weights of the samples inside one window: trapezoid weights for
/// continuous time, `1/w` per step (terminal point excluded) for discrete.
fn window_weights(w: usize, discrete: bool) -> (usize, Vec<f64>) {
    if discrete {
        (0, vec![1.0 / w as f64; w])
    } else {
        let mut v = vec![1.0 / w as f64; w + 1];
        v[0] *= 0.5;
        v[w] *= 0.5;
        (1, v)
    }
}

/// ES at level `epsilon` of the weighted sample: the average of the top
/// `epsilon` mass, splitting the sample that straddles the level. Weights
/// are normalized internally.
pub fn es_sorted_tail(values: &[f64], weights: &[f64], epsilon: f64) -> Result<f64, SampleError> {
    let total: f64 = weights.iter().sum();
    if values.is_empty() || !(total > 0.0) {
        return Err(SampleError::Empty);
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    Ok(tail_average(idx.iter().map(|&i| (values[i], weights[i] / total)), epsilon))
}

/// Tail average over `(value, weight)` pairs given in decreasing value order.
fn tail_average(sorted: impl Iterator<Item = (f64, f64)>, epsilon: f64) -> f64 {
    let mut mass = 0.0;
    let mut acc = 0.0;
    let mut last = f64::NAN;
    for (v, w) in sorted {
        last = v;
        let take = w.min(epsilon - mass);
        if take <= 0.0 {
            break;
        }
        acc += take * v;
        mass += take;
    }
    if mass < epsilon {
        // rounding left a sliver of the level uncovered
        acc += (epsilon - mass) * last;
    }
    acc / epsilon
}

fn window_span(batch: &TrajectoryBatch, window: f64) -> Result<usize, SampleError> {
    match steps_for(window, batch.dt) {
        Some(w) if w > 0 => Ok(w),
        _ => Err(SampleError::WindowMismatch { window, dt: batch.dt }),
    }
}

fn cost_trace(batch: &TrajectoryBatch, path: &SamplePath, cost: &Polynomial) -> Vec<f64> {
    (0..=path.stop_index).map(|i| eval(cost, path.point(i, batch.dim))).collect()
}

/// Series of the per-path windowed average of `cost`.
pub fn windowed_mean_series(
    batch: &TrajectoryBatch,
    cost: &Polynomial,
    window: f64,
) -> Result<WindowStatSeries, SampleError> {
    windowed_series(batch, cost, window, Statistic::Mean)
}

/// Series of the per-path windowed ES of `cost` at level `epsilon`.
pub fn windowed_es_series(
    batch: &TrajectoryBatch,
    cost: &Polynomial,
    window: f64,
    epsilon: f64,
) -> Result<WindowStatSeries, SampleError> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(SampleError::Options(format!("epsilon {epsilon} outside (0, 1]")));
    }
    windowed_series(batch, cost, window, Statistic::Es { epsilon })
}

fn windowed_series(
    batch: &TrajectoryBatch,
    cost: &Polynomial,
    window: f64,
    statistic: Statistic,
) -> Result<WindowStatSeries, SampleError> {
    let w = window_span(batch, window)?;
    let (tail, weights) = window_weights(w, batch.discrete);
    let horizon_steps = batch.paths.iter().map(|p| p.stop_index).max().unwrap_or(0);
    if horizon_steps < w {
        return Err(SampleError::EmptyWindow);
    }
    // window ending at grid index e covers e - w ..= e - 1 + tail
    let ends: Vec<usize> = (w..=horizon_steps).collect();
    let per_path: Vec<Vec<f64>> = crate::par::map_range(batch.paths.len(), crate::par::available(), |pi| {
        let path = &batch.paths[pi];
        let Some(last) = path.last_valid() else { return Vec::new() };
        if last < w {
            return Vec::new();
        }
        let trace = cost_trace(batch, path, cost);
        let mut scratch: Vec<(f64, f64)> = Vec::with_capacity(w + 1);
        (w..=last)
            .map(|e| {
                let lo = e - w;
                let samples = &trace[lo..e + tail];
                match statistic {
                    Statistic::Mean => samples.iter().zip(&weights).map(|(v, k)| v * k).sum(),
                    Statistic::Es { epsilon } => {
                        scratch.clear();
                        scratch.extend(samples.iter().copied().zip(weights.iter().copied()));
                        // only the top of the window matters: the tail mass
                        // needs at most ceil(eps * w) + 2 samples
                        let need = ((epsilon * w as f64).ceil() as usize + 3).min(scratch.len());
                        if need < scratch.len() {
                            scratch.select_nth_unstable_by(need - 1, |a, b| b.0.total_cmp(&a.0));
                            scratch.truncate(need);
                        }
                        scratch.sort_by(|a, b| b.0.total_cmp(&a.0));
                        tail_average(scratch.iter().copied(), epsilon)
                    }
                }
            })
            .collect()
    });

    let mut values = vec![f64::NEG_INFINITY; ends.len()];
    let mut sums = vec![0.0; ends.len()];
    let mut active = vec![0usize; ends.len()];
    for series in &per_path {
        for (j, &v) in series.iter().enumerate() {
            values[j] = values[j].max(v);
            sums[j] += v;
            active[j] += 1;
        }
    }
    let cross_mean: Vec<f64> =
        sums.iter().zip(&active).map(|(s, &a)| if a > 0 { s / a as f64 } else { f64::NAN }).collect();
    let pooled = match statistic {
        Statistic::Mean => cross_mean.clone(),
        Statistic::Es { epsilon } => pooled_es(batch, cost, w, tail, &weights, &ends, epsilon),
    };
    for v in values.iter_mut() {
        if *v == f64::NEG_INFINITY {
            *v = f64::NAN;
        }
    }
    Ok(WindowStatSeries {
        statistic,
        window,
        times: ends.iter().map(|&e| e as f64 * batch.dt).collect(),
        values,
        cross_mean,
        pooled,
        active,
    })
}

/// ES of the distribution formed by pooling every active path's window
/// samples (each path weighted equally).
fn pooled_es(
    batch: &TrajectoryBatch,
    cost: &Polynomial,
    w: usize,
    tail: usize,
    weights: &[f64],
    ends: &[usize],
    epsilon: f64,
) -> Vec<f64> {
    let traces: Vec<Option<Vec<f64>>> =
        batch.paths.iter().map(|p| p.last_valid().filter(|&l| l >= w).map(|_| cost_trace(batch, p, cost))).collect();
    crate::par::map_range(ends.len(), crate::par::available(), |j| {
        let e = ends[j];
        let mut pool: Vec<(f64, f64)> = Vec::new();
        let mut paths = 0usize;
        for (p, tr) in batch.paths.iter().zip(&traces) {
            if let (Some(tr), Some(last)) = (tr, p.last_valid()) {
                if last >= e {
                    pool.extend(tr[e - w..e + tail].iter().copied().zip(weights.iter().copied()));
                    paths += 1;
                }
            }
        }
        if paths == 0 {
            return f64::NAN;
        }
        // every weight is at least half the average, so the top epsilon mass
        // lies within the largest 2 * epsilon * len samples
        let need = ((2.0 * epsilon * pool.len() as f64).ceil() as usize + 3).min(pool.len());
        if need < pool.len() {
            pool.select_nth_unstable_by(need - 1, |a, b| b.0.total_cmp(&a.0));
            pool.truncate(need);
        }
        pool.sort_by(|a, b| b.0.total_cmp(&a.0));
        tail_average(pool.iter().map(|&(v, k)| (v, k / paths as f64)), epsilon)
    })
}

/// Right-continuous weighted empirical CDF.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalCdf {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

pub fn empirical_cdf(samples: &[f64], weights: &[f64]) -> Result<EmpiricalCdf, SampleError> {
    if samples.is_empty() || samples.len() != weights.len() {
        return Err(SampleError::Empty);
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(SampleError::Options("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(SampleError::Empty);
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| samples[a].total_cmp(&samples[b]));
    let mut values = Vec::with_capacity(idx.len());
    let mut cumulative = Vec::with_capacity(idx.len());
    let mut acc = 0.0;
    for i in idx {
        acc += weights[i] / total;
        if values.last() == Some(&samples[i]) {
            *cumulative.last_mut().expect("paired") = acc;
        } else {
            values.push(samples[i]);
            cumulative.push(acc);
        }
    }
    *cumulative.last_mut().expect("nonempty") = 1.0;
    Ok(EmpiricalCdf { values, cumulative })
}

impl EmpiricalCdf {
    /// `P(V <= q)`.
    pub fn eval(&self, q: f64) -> f64 {
        match self.values.partition_point(|&v| v <= q) {
            0 => 0.0,
            i => self.cumulative[i - 1],
        }
    }

    /// Smallest sample value `v` with `CDF(v) >= level`.
    pub fn quantile(&self, level: f64) -> f64 {
        let i = self.cumulative.partition_point(|&c| c < level - 1e-12);
        self.values[i.min(self.values.len() - 1)]
    }
}

fn create(path: &FsPath) -> Result<std::io::BufWriter<std::fs::File>, SampleError> {
    let io = |source| SampleError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?))
}

/// Writes `t,value` rows after a `#` header line.
pub fn write_series_csv(series: &WindowStatSeries, header: &str, path: &FsPath) -> Result<(), SampleError> {
    let io = |source| SampleError::Io { path: path.display().to_string(), source };
    let mut f = create(path)?;
    writeln!(f, "# {header}").map_err(io)?;
    writeln!(f, "t,value,cross_mean,pooled,active").map_err(io)?;
    for i in 0..series.times.len() {
        writeln!(
            f,
            "{},{},{},{},{}",
            series.times[i], series.values[i], series.cross_mean[i], series.pooled[i], series.active[i]
        )
        .map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Writes one row per path and grid point: `path,t,x_1..x_n,p`.
pub fn write_traces_csv(
    batch: &TrajectoryBatch,
    states: &[String],
    cost: &Polynomial,
    header: &str,
    path: &FsPath,
) -> Result<(), SampleError> {
    let io = |source| SampleError::Io { path: path.display().to_string(), source };
    let mut f = create(path)?;
    writeln!(f, "# {header}").map_err(io)?;
    writeln!(f, "path,t,{},p", states.join(",")).map_err(io)?;
    for (k, p) in batch.paths.iter().enumerate() {
        for i in 0..=p.stop_index {
            let x = p.point(i, batch.dim);
            let xs: Vec<String> = x.iter().map(f64::to_string).collect();
            writeln!(f, "{k},{},{},{}", i as f64 * batch.dt, xs.join(","), eval(cost, x)).map_err(io)?;
        }
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_tail() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0; 4];
        assert!((es_sorted_tail(&v, &w, 0.5).unwrap() - 3.5).abs() < 1e-15);
        assert!((es_sorted_tail(&v, &w, 1.0).unwrap() - 2.5).abs() < 1e-15);
        assert!((es_sorted_tail(&v, &w, 0.1).unwrap() - 4.0).abs() < 1e-15);
        assert!((es_sorted_tail(&v, &w, 0.375).unwrap() - (0.25 * 4.0 + 0.125 * 3.0) / 0.375).abs() < 1e-14);
    }

    #[test]
    fn cdf_conventions() {
        let c = empirical_cdf(&[2.0], &[1.0]).unwrap();
        assert_eq!(c.eval(1.999), 0.0);
        assert_eq!(c.eval(2.0), 1.0);
        let c = empirical_cdf(&[4.0, 1.0, 3.0, 2.0], &[1.0; 4]).unwrap();
        assert_eq!(c.quantile(0.5), 2.0);
        assert_eq!(c.quantile(0.51), 3.0);
        assert_eq!(c.eval(2.5), 0.5);
        assert!(empirical_cdf(&[], &[]).is_err());
    }

    #[test]
    fn tail_average_handles_partial_weights() {
        let s = [(5.0, 0.1), (4.0, 0.3), (1.0, 0.6)];
        assert!((tail_average(s.into_iter(), 0.2) - 4.5).abs() < 1e-15);
    }
}
