//! Long-time behaviour: invariant measures, total-variation decay, moment bounds.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MsdeError, Result};
use crate::model::{check_h4, CheckReport, ModelSpec};
use crate::rng::{substream, AUX_STREAM_BASE};
use crate::simulate::{check_x0, run_path, SimConfig};
use crate::stats::{linear_fit, trapezoid, BoundCheck, BoundReport, MeanSe};
use crate::linalg::norm_sq;

/// Full histograms are kept up to this dimension; above it only coordinate marginals.
pub const MAX_HISTOGRAM_DIM: usize = 3;

const WARN_OUT_OF_RANGE: f64 = 0.01;
const MAX_OUT_OF_RANGE: f64 = 0.10;

/// Rectangular grid given by strictly increasing edges per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub edges: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(edges: Vec<Vec<f64>>) -> Result<Self> {
        if edges.is_empty() {
            return Err(invalid("grid", "needs at least one dimension"));
        }
        for e in &edges {
            if e.len() < 2 || !e.windows(2).all(|w| w[0] < w[1]) || e.iter().any(|v| !v.is_finite()) {
                return Err(invalid("grid", "edges must be finite and strictly increasing, at least two per dimension"));
            }
        }
        Ok(Grid { edges })
    }

    pub fn uniform(lower: &[f64], upper: &[f64], bins: usize) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(MsdeError::Dimension { expected: lower.len(), got: upper.len() });
        }
        if bins == 0 {
            return Err(invalid("bins", "must be positive"));
        }
        let edges = lower
            .iter()
            .zip(upper)
            .map(|(&a, &b)| (0..=bins).map(|i| a + (b - a) * i as f64 / bins as f64).collect())
            .collect();
        Grid::new(edges)
    }

    /// Cube-root rule: `⌈N^{1/3}⌉` bins per dimension.
    pub fn cube_root(lower: &[f64], upper: &[f64], n_samples: usize) -> Result<Self> {
        Grid::uniform(lower, upper, cube_root_bins(n_samples))
    }

    pub fn dim(&self) -> usize {
        self.edges.len()
    }

    pub fn bins_per_dim(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len() - 1).collect()
    }

    pub fn n_bins(&self) -> usize {
        self.bins_per_dim().iter().product()
    }

    fn coord_bin(edges: &[f64], v: f64) -> Option<usize> {
        let last = edges.len() - 1;
        if !(v >= edges[0] && v <= edges[last]) {
            return None;
        }
        let i = edges.partition_point(|&e| e <= v);
        Some(i.saturating_sub(1).min(last - 1))
    }

    /// Row-major flat bin index, or `None` outside the grid.
    pub fn bin_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (e, &v) in self.edges.iter().zip(x) {
            idx = idx * (e.len() - 1) + Grid::coord_bin(e, v)?;
        }
        Some(idx)
    }

    /// Lower and upper corner of a flat bin.
    pub fn bin_bounds(&self, mut flat: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let (mut lo, mut hi) = (vec![0.0; d], vec![0.0; d]);
        for k in (0..d).rev() {
            let nb = self.edges[k].len() - 1;
            let i = flat % nb;
            flat /= nb;
            lo[k] = self.edges[k][i];
            hi[k] = self.edges[k][i + 1];
        }
        (lo, hi)
    }

    /// Bin probabilities of a 1-d law from its CDF; the remainder is the out-of-range mass.
    pub fn probabilities_1d(&self, cdf: impl Fn(f64) -> f64) -> Result<(Vec<f64>, f64)> {
        if self.dim() != 1 {
            return Err(MsdeError::Dimension { expected: 1, got: self.dim() });
        }
        let probs: Vec<f64> = self.edges[0].windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
        let outside = (1.0 - probs.iter().sum::<f64>()).max(0.0);
        Ok((probs, outside))
    }

    fn marginal(&self, coords: &[usize]) -> Grid {
        Grid { edges: coords.iter().map(|&c| self.edges[c].clone()).collect() }
    }
}

pub fn cube_root_bins(n_samples: usize) -> usize {
    let r = (n_samples.max(1) as f64).cbrt();
    // guard against cbrt rounding just above an exact cube
    let r = if (r.round() - r).abs() < 1e-9 { r.round() } else { r.ceil() };
    (r as usize).max(1)
}

/// Whether a TV value compares full joint histograms or only coordinate marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvKind {
    Full,
    MarginalOnly,
}

/// Fixed-grid histogram. For `d > 3` the joint counts are not kept; the measure
/// carries all 1-d and 2-d coordinate marginals instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub grid: Grid,
    pub counts: Vec<u64>,
    pub total: u64,
    pub out_of_range: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marginals: Vec<(Vec<usize>, EmpiricalMeasure)>,
}

impl EmpiricalMeasure {
    pub fn empty(grid: Grid) -> Self {
        let d = grid.dim();
        if d <= MAX_HISTOGRAM_DIM {
            let n = grid.n_bins();
            return EmpiricalMeasure { grid, counts: vec![0; n], total: 0, out_of_range: 0, marginals: Vec::new() };
        }
        let mut marginals = Vec::new();
        for i in 0..d {
            marginals.push((vec![i], EmpiricalMeasure::empty(grid.marginal(&[i]))));
        }
        for i in 0..d {
            for j in i + 1..d {
                marginals.push((vec![i, j], EmpiricalMeasure::empty(grid.marginal(&[i, j]))));
            }
        }
        EmpiricalMeasure { grid, counts: Vec::new(), total: 0, out_of_range: 0, marginals }
    }

    pub fn from_points<'a>(grid: Grid, points: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut m = EmpiricalMeasure::empty(grid);
        for p in points {
            m.add(p);
        }
        m
    }

    pub fn kind(&self) -> TvKind {
        if self.marginals.is_empty() {
            TvKind::Full
        } else {
            TvKind::MarginalOnly
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.total += 1;
        if self.marginals.is_empty() {
            match self.grid.bin_of(x) {
                Some(b) => self.counts[b] += 1,
                None => self.out_of_range += 1,
            }
            return;
        }
        if self.grid.bin_of(x).is_none() {
            self.out_of_range += 1;
        }
        let mut buf = [0.0; 2];
        for (coords, m) in &mut self.marginals {
            for (k, &c) in coords.iter().enumerate() {
                buf[k] = x[c];
            }
            m.add(&buf[..coords.len()]);
        }
    }

    /// Adds counts of a measure on the same grid. Integer sums, so any merge order gives the same result.
    pub fn merge(&mut self, other: &EmpiricalMeasure) -> Result<()> {
        if self.grid != other.grid {
            return Err(MsdeError::GridMismatch);
        }
        self.total += other.total;
        self.out_of_range += other.out_of_range;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for ((_, a), (_, b)) in self.marginals.iter_mut().zip(&other.marginals) {
            a.merge(b)?;
        }
        Ok(())
    }

    pub fn out_of_range_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.out_of_range as f64 / self.total as f64
        }
    }

    /// Normalized bin frequencies followed by the out-of-range frequency.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.total.max(1) as f64;
        self.counts.iter().chain(std::iter::once(&self.out_of_range)).map(|&c| c as f64 / n).collect()
    }

    /// Index of the most populated bin.
    pub fn mode_bin(&self) -> Option<usize> {
        self.counts.iter().enumerate().max_by_key(|(i, &c)| (c, std::cmp::Reverse(*i))).map(|(i, _)| i)
    }

    /// Draws a point: a bin with probability proportional to its count, then uniform within it.
    pub fn sample(&self, rng: &mut impl Rng) -> Option<Vec<f64>> {
        let in_range = self.total - self.out_of_range;
        if self.counts.is_empty() || in_range == 0 {
            return None;
        }
        let mut u = rng.random_range(0..in_range);
        let bin = self
            .counts
            .iter()
            .position(|&c| {
                if u < c {
                    true
                } else {
                    u -= c;
                    false
                }
            })
            .expect("counts sum to the in-range total");
        let (lo, hi) = self.grid.bin_bounds(bin);
        Some(lo.iter().zip(&hi).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect())
    }
}

/// TV estimate with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub tv: f64,
    pub se: f64,
    pub kind: TvKind,
}

/// Jackknife variance of `½Σ|c_i/N - q_i|` over the samples behind `counts`, with `q` fixed.
fn jackknife_var(counts: &[u64], q: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n < 2 {
        return 0.0;
    }
    let m = (n - 1) as f64;
    let s: f64 = counts.iter().zip(q).map(|(&c, &qi)| (c as f64 / m - qi).abs()).sum();
    // delete-one value for a sample sitting in bin j
    let theta = |j: usize| {
        let c = counts[j] as f64;
        0.5 * (s - (c / m - q[j]).abs() + ((c - 1.0) / m - q[j]).abs())
    };
    let nf = n as f64;
    let mean: f64 = counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(j, &c)| c as f64 * theta(j)).sum::<f64>() / nf;
    let ss: f64 = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(j, &c)| c as f64 * (theta(j) - mean).powi(2))
        .sum();
    (nf - 1.0) / nf * ss
}

fn with_outside(m: &EmpiricalMeasure) -> Vec<u64> {
    m.counts.iter().copied().chain(std::iter::once(m.out_of_range)).collect()
}

fn full_tv(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> (f64, f64) {
    let p = a.frequencies();
    let q = b.frequencies();
    let tv = (0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>()).clamp(0.0, 1.0);
    let var = jackknife_var(&with_outside(a), &q) + jackknife_var(&with_outside(b), &p);
    (tv, var.sqrt())
}

/// `½ Σ |p_i - q_i|` over bins plus the out-of-range bucket.
///
/// A lower bound of the TV distance of the underlying laws. For measures kept as
/// marginals the largest marginal TV is returned, labelled [`TvKind::MarginalOnly`].
pub fn tv_distance(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> Result<TvEstimate> {
    if mu1.grid != mu2.grid {
        return Err(MsdeError::GridMismatch);
    }
    if mu1.total == 0 || mu2.total == 0 {
        return Err(invalid("measure", "empty measure"));
    }
    if mu1.marginals.is_empty() {
        let (tv, se) = full_tv(mu1, mu2);
        return Ok(TvEstimate { tv, se, kind: TvKind::Full });
    }
    let mut best = (0.0, 0.0);
    for ((_, a), (_, b)) in mu1.marginals.iter().zip(&mu2.marginals) {
        let r = full_tv(a, b);
        if r.0 > best.0 {
            best = r;
        }
    }
    Ok(TvEstimate { tv: best.0, se: best.1, kind: TvKind::MarginalOnly })
}

/// TV between a full histogram and known bin probabilities (`probs` per bin, `outside` for the rest).
pub fn tv_against(mu: &EmpiricalMeasure, probs: &[f64], outside: f64) -> Result<TvEstimate> {
    if mu.counts.len() != probs.len() {
        return Err(MsdeError::GridMismatch);
    }
    let q: Vec<f64> = probs.iter().copied().chain(std::iter::once(outside)).collect();
    let p = mu.frequencies();
    let tv = (0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>()).clamp(0.0, 1.0);
    Ok(TvEstimate { tv, se: jackknife_var(&with_outside(mu), &q).sqrt(), kind: TvKind::Full })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantEstimate {
    pub measure: EmpiricalMeasure,
    /// Mean over paths of each path's time-averaged `|X|²`.
    pub second_moment: MeanSe,
    /// Per coordinate, mean over paths of the time-averaged coordinate.
    pub coordinate_means: Vec<MeanSe>,
    pub confinement: CheckReport,
    pub warnings: Vec<String>,
}

fn confinement_radius(x0: &[f64], grid: &Grid) -> f64 {
    let extent: f64 = grid.edges.iter().map(|e| e[0].abs().max(e[e.len() - 1].abs()).powi(2)).sum::<f64>().sqrt();
    extent.max(norm_sq(x0).sqrt()).clamp(1.0, 1e3)
}

struct PathOccupation {
    measure: EmpiricalMeasure,
    sq: f64,
    coords: Vec<f64>,
}

/// Occupation measure of `[burn_in_t, burn_in_t + sample_t]` over all paths.
///
/// States are recorded every `config.record_stride` steps inside the window;
/// `config.horizon_t` is ignored.
pub fn estimate_invariant(
    model: &ModelSpec,
    x0: &[f64],
    burn_in_t: f64,
    sample_t: f64,
    config: &SimConfig,
    grid: &Grid,
) -> Result<InvariantEstimate> {
    model.validate()?;
    if !(burn_in_t >= 0.0) || !(sample_t > 0.0) {
        return Err(invalid("burn_in_t", "need burn_in_t >= 0 and sample_t > 0"));
    }
    if grid.dim() != model.dim_x {
        return Err(MsdeError::Dimension { expected: model.dim_x, got: grid.dim() });
    }
    let cfg = SimConfig { horizon_t: burn_in_t + sample_t, ..config.clone() };
    cfg.validate()?;
    check_x0(&model.operator, x0, model.dim_x)?;
    let confinement = check_h4(model, &model.constants, 2000, confinement_radius(x0, grid), cfg.master_seed)?;
    let mut warnings = Vec::new();
    if !confinement.passed() {
        warnings.push(format!("confinement not verified: {}", confinement.summary()));
    }

    let first = (burn_in_t / cfg.step_h).round() as usize;
    let stride = cfg.record_stride;
    let occupations: Vec<PathOccupation> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut occ = PathOccupation {
                measure: EmpiricalMeasure::empty(grid.clone()),
                sq: 0.0,
                coords: vec![0.0; model.dim_x],
            };
            run_path(model, &model.operator, x0, &cfg, p, p as u64, |k, x, _| {
                if k >= first && (k - first).is_multiple_of(stride) {
                    occ.measure.add(x);
                    occ.sq += norm_sq(x);
                    occ.coords.iter_mut().zip(x).for_each(|(c, v)| *c += v);
                }
            })?;
            let n = occ.measure.total.max(1) as f64;
            occ.sq /= n;
            occ.coords.iter_mut().for_each(|c| *c /= n);
            Ok(occ)
        })
        .collect::<Result<_>>()?;

    let mut measure = EmpiricalMeasure::empty(grid.clone());
    for o in &occupations {
        measure.merge(&o.measure)?;
    }
    let frac = measure.out_of_range_fraction();
    if frac > MAX_OUT_OF_RANGE {
        return Err(MsdeError::GridTooSmall { fraction: frac });
    }
    if frac > WARN_OUT_OF_RANGE {
        warnings.push(format!("grid too small: {:.2}% of the mass lies outside", 100.0 * frac));
    }
    Ok(InvariantEstimate {
        second_moment: MeanSe::of_iter(occupations.iter().map(|o| o.sq)),
        coordinate_means: (0..model.dim_x).map(|i| MeanSe::of_iter(occupations.iter().map(|o| o.coords[i]))).collect(),
        measure,
        confinement,
        warnings,
    })
}

/// Values over time with a log-linear decay fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Times whose value exceeds `3·SE`; the fit uses only these.
    pub fit_window: Vec<f64>,
    pub alpha_hat: Option<f64>,
    pub r_squared: Option<f64>,
    pub intercept: Option<f64>,
    pub fit_valid: bool,
    pub kind: TvKind,
    pub notes: Vec<String>,
}

impl DecaySeries {
    pub fn fit(times: Vec<f64>, values: Vec<f64>, standard_errors: Vec<f64>, kind: TvKind) -> Self {
        let (mut wt, mut wl) = (Vec::new(), Vec::new());
        for ((&t, &v), &se) in times.iter().zip(&values).zip(&standard_errors) {
            if v > 3.0 * se && v > 0.0 {
                wt.push(t);
                wl.push(v.ln());
            }
        }
        let mut notes = Vec::new();
        let fit = if wt.len() >= 3 { linear_fit(&wt, &wl) } else { None };
        if fit.is_none() {
            notes.push(format!("fit invalid: {} usable times above the noise floor, need 3", wt.len()));
        }
        DecaySeries {
            times,
            values,
            standard_errors,
            fit_window: wt,
            alpha_hat: fit.map(|f| -f.slope),
            r_squared: fit.map(|f| f.r_squared),
            intercept: fit.map(|f| f.intercept),
            fit_valid: fit.is_some(),
            kind,
            notes,
        }
    }

    /// Fitted value at `t`; `None` outside the fit window.
    pub fn predict(&self, t: f64) -> Option<f64> {
        let (lo, hi) = (self.fit_window.first()?, self.fit_window.last()?);
        if t < *lo || t > *hi {
            return None;
        }
        Some((self.intercept? - self.alpha_hat? * t).exp())
    }
}

fn time_stream(time_index: usize, path: usize) -> u64 {
    ((time_index as u64 + 1) << 40) | path as u64
}

/// Histogram of `X_t` from a fresh ensemble for each `t`, compared with `reference`.
pub fn tv_decay(
    model: &ModelSpec,
    x0: &[f64],
    reference: &EmpiricalMeasure,
    times: &[f64],
    config: &SimConfig,
    grid: &Grid,
) -> Result<DecaySeries> {
    model.validate()?;
    config.validate()?;
    check_x0(&model.operator, x0, model.dim_x)?;
    if &reference.grid != grid {
        return Err(MsdeError::GridMismatch);
    }
    if reference.total < 10 * config.n_paths as u64 {
        return Err(invalid(
            "reference",
            format!("needs at least 10x the per-time sample size ({} < {})", reference.total, 10 * config.n_paths),
        ));
    }
    let (mut tvs, mut ses) = (Vec::new(), Vec::new());
    for (ti, &t) in times.iter().enumerate() {
        let cfg = SimConfig { horizon_t: t, ..config.clone() };
        cfg.validate()?;
        let n_steps = cfg.n_steps();
        let measure = (0..cfg.n_paths)
            .into_par_iter()
            .map(|p| {
                let mut m = EmpiricalMeasure::empty(grid.clone());
                run_path(model, &model.operator, x0, &cfg, p, time_stream(ti, p), |k, x, _| {
                    if k == n_steps {
                        m.add(x);
                    }
                })?;
                Ok(m)
            })
            .try_reduce(
                || EmpiricalMeasure::empty(grid.clone()),
                |mut a, b| {
                    a.merge(&b)?;
                    Ok(a)
                },
            )?;
        let est = tv_distance(&measure, reference)?;
        tvs.push(est.tv);
        ses.push(est.se);
    }
    Ok(DecaySeries::fit(times.to_vec(), tvs, ses, reference.kind()))
}

/// `(1/T) ∫_0^T E|X_s|² ds` against `λ4/λ3 + |x0|²/(λ3 T)` at `3·SE`.
///
/// The second term is the transient from the starting point and vanishes for `x0 = 0`.
pub fn time_average_moment_check(model: &ModelSpec, x0: &[f64], config: &SimConfig) -> Result<BoundReport> {
    model.validate()?;
    config.validate()?;
    check_x0(&model.operator, x0, model.dim_x)?;
    let c = &model.constants;
    let t_end = config.n_steps() as f64 * config.step_h;
    let steps = config.record_steps();
    let averages: Vec<f64> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut ys = Vec::with_capacity(steps.len());
            let mut next = 0;
            run_path(model, &model.operator, x0, config, p, p as u64, |k, x, _| {
                if next < steps.len() && steps[next] == k {
                    ys.push(norm_sq(x));
                    next += 1;
                }
            })?;
            let ts: Vec<f64> = steps.iter().map(|&k| k as f64 * config.step_h).collect();
            Ok(trapezoid(&ts, &ys) / t_end)
        })
        .collect::<Result<_>>()?;
    let bound = c.lambda4 / c.lambda3 + norm_sq(x0) / (c.lambda3 * t_end);
    let mut report = BoundReport::new("time-average second moment");
    report.constants = vec![
        ("lambda3".into(), c.lambda3),
        ("lambda4".into(), c.lambda4),
        ("p".into(), c.p),
        ("T".into(), t_end),
    ];
    report.checks.push(BoundCheck::upper("(1/T)∫E|X_s|^2 ds", Some(t_end), MeanSe::of(&averages), bound, 3.0));
    Ok(report)
}

/// Solution of `f' = -λ3 f^{p/2} + λ4`, `f(0) = |x0|²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `(λ4/λ3)^{2/p}`
    pub equilibrium: f64,
    pub monotone: bool,
    pub envelope: Option<EnvelopeCheck>,
}

/// Algebraic tail for `p > 2`: `(f(t) - f*)·t^{2/(p-2)}` stays bounded on `[10, 1000]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    /// `(2/(λ3(p-2)))^{2/(p-2)}`, the limit of `f·t^{2/(p-2)}` when `λ4 = 0`.
    pub limit: f64,
    pub max_scaled: f64,
    pub bounded: bool,
}

struct OdeRhs {
    l3: f64,
    l4: f64,
    half_p: f64,
}

impl OdeRhs {
    fn eval(&self, f: f64) -> f64 {
        -self.l3 * f.max(0.0).powf(self.half_p) + self.l4
    }
}

const ODE_TOL: f64 = 1e-10;

/// Dormand–Prince 5(4) for the autonomous scalar equation from `t` to `t1`, absolute and relative tolerance `ODE_TOL`.
fn integrate(rhs: &OdeRhs, mut t: f64, t1: f64, mut y: f64, h_guess: &mut f64) -> f64 {
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    while t < t1 {
        let h = h_guess.min(t1 - t);
        let mut k = [0.0; 7];
        k[0] = rhs.eval(y);
        for s in 0..6 {
            let yi = y + h * (0..=s).map(|j| A[s][j] * k[j]).sum::<f64>();
            k[s + 1] = rhs.eval(yi);
        }
        // the seventh stage is evaluated at the fifth-order solution
        let y5 = y + h * (0..6).map(|j| A[5][j] * k[j]).sum::<f64>();
        let err = h * (0..7).map(|j| E[j] * k[j]).sum::<f64>();
        let scale = ODE_TOL * (1.0 + y.abs().max(y5.abs()));
        let ratio = err.abs() / scale;
        if ratio <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
        *h_guess = (h * factor).max(1e-14);
    }
    y
}

pub fn comparison_ode(lambda3: f64, lambda4: f64, p: f64, x0_sq: f64, times: &[f64]) -> Result<ComparisonCurve> {
    if !(lambda3 > 0.0) {
        return Err(invalid("lambda3", "must be positive"));
    }
    if !(p >= 2.0) {
        return Err(invalid("p", "must be at least 2"));
    }
    if !(lambda4 >= 0.0) || !(x0_sq >= 0.0) {
        return Err(invalid("lambda4", "lambda4 and |x0|^2 must be nonnegative"));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || !times.windows(2).all(|w| w[0] <= w[1]) {
        return Err(invalid("times", "must be nonnegative and sorted"));
    }
    let rhs = OdeRhs { l3: lambda3, l4: lambda4, half_p: p / 2.0 };
    let equilibrium = (lambda4 / lambda3).powf(2.0 / p);
    let (mut t, mut y, mut h) = (0.0, x0_sq, 1e-3);
    let mut values = Vec::with_capacity(times.len());
    for &ti in times {
        y = integrate(&rhs, t, ti, y, &mut h);
        t = ti;
        values.push(y);
    }
    let sign = (x0_sq - equilibrium).signum();
    let monotone = values.windows(2).all(|w| sign * (w[1] - w[0]) <= 1e-12 * (1.0 + w[0].abs()))
        && values.iter().all(|v| sign * (v - equilibrium) >= -1e-9);
    let envelope = if p > 2.0 { Some(envelope_check(&rhs, p, x0_sq, equilibrium)) } else { None };
    Ok(ComparisonCurve { times: times.to_vec(), values, equilibrium, monotone, envelope })
}

fn envelope_check(rhs: &OdeRhs, p: f64, x0_sq: f64, equilibrium: f64) -> EnvelopeCheck {
    let k = 2.0 / (p - 2.0);
    let limit = (2.0 / (rhs.l3 * (p - 2.0))).powf(k);
    let (mut t, mut y, mut h) = (0.0, x0_sq, 1e-3);
    let mut scaled = Vec::new();
    for i in 0..=40 {
        let ti = 10f64 * 100f64.powf(i as f64 / 40.0);
        y = integrate(rhs, t, ti, y, &mut h);
        t = ti;
        scaled.push((y - equilibrium).abs() * ti.powf(k));
    }
    let max_scaled = scaled.iter().cloned().fold(0.0, f64::max);
    let bounded = max_scaled <= scaled[0].max(limit) * (1.0 + 1e-6);
    EnvelopeCheck { limit, max_scaled, bounded }
}

/// `E|X_t|² <= f(t) + 3·SE` at each requested time, `f` from [`comparison_ode`].
pub fn moment_domination_check(model: &ModelSpec, x0: &[f64], times: &[f64], config: &SimConfig) -> Result<BoundReport> {
    model.validate()?;
    check_x0(&model.operator, x0, model.dim_x)?;
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let cfg = SimConfig { horizon_t: t_max, ..config.clone() };
    cfg.validate()?;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let steps: Vec<usize> = sorted.iter().map(|t| (t / cfg.step_h).round() as usize).collect();
    let per_path: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut out = vec![0.0; steps.len()];
            run_path(model, &model.operator, x0, &cfg, p, p as u64, |k, x, _| {
                for (o, &s) in out.iter_mut().zip(&steps) {
                    if s == k {
                        *o = norm_sq(x);
                    }
                }
            })?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let c = &model.constants;
    let curve = comparison_ode(c.lambda3, c.lambda4, c.p, norm_sq(x0), &sorted)?;
    let mut report = BoundReport::new("second moment under the comparison ODE");
    report.constants = vec![("lambda3".into(), c.lambda3), ("lambda4".into(), c.lambda4), ("p".into(), c.p)];
    for (i, &t) in sorted.iter().enumerate() {
        let est = MeanSe::of_iter(per_path.iter().map(|v| v[i]));
        report.checks.push(BoundCheck::upper("E|X_t|^2", Some(t), est, curve.values[i], 3.0));
    }
    Ok(report)
}

/// Bounded-or-polynomial test observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    Tanh { coord: usize },
    /// `clamp(x_coord, -clip, clip)^degree`
    ClippedPoly { coord: usize, degree: u32, clip: f64 },
    Constant { value: f64 },
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Tanh { coord } => x[*coord].tanh(),
            Observable::ClippedPoly { coord, degree, clip } => x[*coord].clamp(-clip, *clip).powi(*degree as i32),
            Observable::Constant { value } => *value,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let coord = match self {
            Observable::Tanh { coord } | Observable::ClippedPoly { coord, .. } => *coord,
            Observable::Constant { .. } => return Ok(()),
        };
        if coord >= dim {
            return Err(invalid("coord", format!("coordinate {coord} out of range for dimension {dim}")));
        }
        if let Observable::ClippedPoly { clip, .. } = self {
            if !(*clip > 0.0) {
                return Err(invalid("clip", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableDecayReport {
    pub q: f64,
    pub series: DecaySeries,
    /// `‖φ - μ(φ)‖_q` over the outer sample.
    pub phi_norm: f64,
    /// `α̂_TV / q` when a TV rate is supplied.
    pub tv_rate_over_q: Option<f64>,
}

/// `‖P_t φ - μ(φ)‖_{L^q(μ)}` by outer samples `x ~ μ` and inner ensembles from each `x`.
///
/// `μ(φ)` is the outer average of the inner estimates at each `t`, which equals
/// `μ(P_t φ) = μ(φ)` under invariance.
#[allow(clippy::too_many_arguments)]
pub fn observable_decay(
    model: &ModelSpec,
    observable: &Observable,
    q: f64,
    mu: &EmpiricalMeasure,
    times: &[f64],
    n_outer: usize,
    config: &SimConfig,
    tv_alpha: Option<f64>,
) -> Result<ObservableDecayReport> {
    if !(q > 1.0) {
        return Err(invalid("q", format!("must exceed 1, got {q}")));
    }
    model.validate()?;
    observable.validate(model.dim_x)?;
    if n_outer < 2 {
        return Err(invalid("n_outer", "need at least two outer samples"));
    }
    let mut rng = substream(config.master_seed, AUX_STREAM_BASE);
    let mut outer = Vec::with_capacity(n_outer);
    while outer.len() < n_outer {
        let x = mu.sample(&mut rng).ok_or_else(|| invalid("mu", "needs a full histogram with in-range mass"))?;
        // histogram bins may poke outside a constrained domain
        outer.push(crate::operators::project_domain(&model.operator, &x));
    }
    let phi_vals: Vec<f64> = outer.iter().map(|x| observable.eval(x)).collect();
    let phi_mean = phi_vals.iter().sum::<f64>() / n_outer as f64;
    let phi_norm = (phi_vals.iter().map(|v| (v - phi_mean).abs().powf(q)).sum::<f64>() / n_outer as f64).powf(1.0 / q);

    let n_inner = config.n_paths;
    let (mut values, mut ses) = (Vec::new(), Vec::new());
    for (ti, &t) in times.iter().enumerate() {
        let cfg = SimConfig { horizon_t: t, ..config.clone() };
        cfg.validate()?;
        let n_steps = cfg.n_steps();
        let pt: Vec<f64> = outer
            .par_iter()
            .enumerate()
            .map(|(o, x)| {
                let mut sum = 0.0;
                for j in 0..n_inner {
                    let stream = time_stream(ti, o * n_inner + j);
                    run_path(model, &model.operator, x, &cfg, j, stream, |k, y, _| {
                        if k == n_steps {
                            sum += observable.eval(y);
                        }
                    })?;
                }
                Ok(sum / n_inner as f64)
            })
            .collect::<Result<_>>()?;
        let centre = pt.iter().sum::<f64>() / pt.len() as f64;
        let powers: Vec<f64> = pt.iter().map(|v| (v - centre).abs().powf(q)).collect();
        let m = MeanSe::of(&powers);
        let value = m.mean.max(0.0).powf(1.0 / q);
        // delta method for the q-th root
        let se = if value > 0.0 { m.se * value.powf(1.0 - q) / q } else { m.se };
        values.push(value);
        ses.push(se);
    }
    let series = DecaySeries::fit(times.to_vec(), values, ses, TvKind::Full);
    Ok(ObservableDecayReport { q, series, phi_norm, tv_rate_over_q: tv_alpha.map(|a| a / q) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(bins: usize) -> Grid {
        Grid::uniform(&[0.0], &[1.0], bins).unwrap()
    }

    fn measure(grid: &Grid, pts: &[f64]) -> EmpiricalMeasure {
        let v: Vec<[f64; 1]> = pts.iter().map(|&p| [p]).collect();
        EmpiricalMeasure::from_points(grid.clone(), v.iter().map(|p| &p[..]))
    }

    #[test]
    fn tv_examples() {
        let g = grid1(2);
        let a = measure(&g, &[0.1, 0.9]);
        assert_eq!(tv_distance(&a, &a).unwrap().tv, 0.0);
        let b = measure(&g, &[0.1, 0.2, 0.3, 0.9]);
        assert!((tv_distance(&a, &b).unwrap().tv - 0.25).abs() < 1e-15);
        let c = measure(&g, &[0.1, 0.2]);
        let d = measure(&g, &[0.7, 0.8]);
        assert_eq!(tv_distance(&c, &d).unwrap().tv, 1.0);
        let e = measure(&g, &[5.0, 6.0]);
        assert_eq!(tv_distance(&c, &e).unwrap().tv, 1.0);
    }

    #[test]
    fn grid_mismatch() {
        let a = measure(&grid1(2), &[0.1]);
        let b = measure(&grid1(3), &[0.1]);
        assert_eq!(tv_distance(&a, &b).unwrap_err(), MsdeError::GridMismatch);
    }

    #[test]
    fn binning_edges() {
        let g = grid1(4);
        assert_eq!(g.bin_of(&[0.0]), Some(0));
        assert_eq!(g.bin_of(&[0.25]), Some(1));
        assert_eq!(g.bin_of(&[1.0]), Some(3));
        assert_eq!(g.bin_of(&[1.0000001]), None);
        assert_eq!(g.bin_of(&[f64::NAN]), None);
        let g2 = Grid::uniform(&[0.0, 0.0], &[1.0, 2.0], 2).unwrap();
        assert_eq!(g2.bin_of(&[0.7, 0.2]), Some(2));
        assert_eq!(g2.bin_bounds(2), (vec![0.5, 0.0], vec![1.0, 1.0]));
    }

    #[test]
    fn cube_root_rule() {
        assert_eq!(cube_root_bins(1_000_000), 100);
        assert_eq!(cube_root_bins(1_000_001), 101);
        assert_eq!(cube_root_bins(27), 3);
        assert!(Grid::new(vec![vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let g = grid1(3);
        let a = measure(&g, &[0.1, 0.2, 0.5, 0.9, 0.95, 2.0]);
        let q = vec![0.2, 0.3, 0.4, 0.1];
        let fast = jackknife_var(&with_outside(&a), &q);
        let pts = [0.1, 0.2, 0.5, 0.9, 0.95, 2.0];
        let n = pts.len() as f64;
        let thetas: Vec<f64> = (0..pts.len())
            .map(|i| {
                let rest: Vec<f64> = pts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &p)| p).collect();
                let m = measure(&g, &rest);
                0.5 * m.frequencies().iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>()
            })
            .collect();
        let mean = thetas.iter().sum::<f64>() / n;
        let slow = (n - 1.0) / n * thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>();
        assert!((fast - slow).abs() < 1e-14, "{fast} vs {slow}");
    }

    #[test]
    fn high_dimension_uses_marginals() {
        let g = Grid::uniform(&[0.0; 4], &[1.0; 4], 2).unwrap();
        let mut a = EmpiricalMeasure::empty(g.clone());
        let mut b = EmpiricalMeasure::empty(g);
        a.add(&[0.1, 0.1, 0.1, 0.1]);
        b.add(&[0.1, 0.1, 0.1, 0.9]);
        let tv = tv_distance(&a, &b).unwrap();
        assert_eq!(tv.kind, TvKind::MarginalOnly);
        assert_eq!(tv.tv, 1.0);
        assert_eq!(a.marginals.len(), 4 + 6);
    }

    #[test]
    fn merge_is_count_sum() {
        let g = grid1(4);
        let mut a = measure(&g, &[0.1, 0.6]);
        let b = measure(&g, &[0.6, 3.0]);
        a.merge(&b).unwrap();
        assert_eq!(a.counts, vec![1, 0, 2, 0]);
        assert_eq!((a.total, a.out_of_range), (4, 1));
    }

    #[test]
    fn ode_linear_case() {
        let ts = [0.0, 0.5, 1.0, 3.0];
        let c = comparison_ode(2.0, 0.0, 2.0, 4.0, &ts).unwrap();
        for (t, v) in ts.iter().zip(&c.values) {
            assert!((v - 4.0 * (-2.0 * t).exp()).abs() < 1e-9);
        }
        assert!(c.monotone && c.envelope.is_none());
    }

    #[test]
    fn ode_equilibrium_and_quartic() {
        let c = comparison_ode(2.0, 8.0, 4.0, 2.0, &[0.0, 1.0, 10.0]).unwrap();
        assert!(c.values.iter().all(|v| (v - 2.0).abs() < 1e-12));
        let ts: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let c = comparison_ode(1.0, 0.0, 4.0, 1.0, &ts).unwrap();
        for (t, v) in ts.iter().zip(&c.values) {
            assert!((v - 1.0 / (1.0 + t)).abs() < 1e-8);
        }
        let env = c.envelope.unwrap();
        assert!(env.bounded && (env.limit - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decay_fit_rules() {
        let times = vec![0.0, 1.0, 2.0, 3.0];
        let vals: Vec<f64> = times.iter().map(|t: &f64| 0.5 * (-0.7 * t).exp()).collect();
        let s = DecaySeries::fit(times.clone(), vals.clone(), vec![1e-4; 4], TvKind::Full);
        assert!((s.alpha_hat.unwrap() - 0.7).abs() < 1e-12);
        assert!(s.predict(4.0).is_none());
        assert!((s.predict(1.5).unwrap() - 0.5 * (-1.05f64).exp()).abs() < 1e-12);
        let s = DecaySeries::fit(times, vals, vec![0.1; 4], TvKind::Full);
        assert!(!s.fit_valid && s.alpha_hat.is_none());
    }

    #[test]
    fn observables() {
        let o = Observable::ClippedPoly { coord: 0, degree: 1, clip: 10.0 };
        assert_eq!(o.eval(&[12.0]), 10.0);
        assert_eq!(Observable::Constant { value: 2.0 }.eval(&[1.0]), 2.0);
        assert!(Observable::Tanh { coord: 2 }.validate(2).is_err());
    }
}
