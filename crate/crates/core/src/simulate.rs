//! Time discretization of `dX + A(X)dt ∋ b(X)dt + σ(X)dW` with the constraint
//! force `K` tracked through its accumulated variation.
//!
//! Two schemes are available:
//!
//! * `ResolventSplit` (default): explicit Euler–Maruyama predictor followed by
//!   the resolvent `J_h`, i.e. backward Euler in `A`. For normal cones this is
//!   the projection scheme and every state stays in the constraint set.
//! * `YosidaEuler`: explicit Euler on the penalized drift `b - A_λ`.
//!
//! Path `i` draws its Brownian increments from substream `i` of the master
//! seed, so ensembles are identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MsdeError, Result};
use crate::linalg::{dist, norm, norm_sq, Matrix};
use crate::model::{Coefficients, ModelSpec};
use crate::operators::{minimal_section, OperatorSpec, PreparedResolvent};
use crate::rng::{fill_normal, substream, NORMAL_METHOD};
use crate::stats::{linear_fit, BoundCheck, BoundReport, MeanSe};

/// States beyond this norm are treated as an overflow.
pub const OVERFLOW_GUARD: f64 = 1e150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum Scheme {
    #[default]
    ResolventSplit,
    YosidaEuler { lambda_n: f64 },
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub step_h: f64,
    pub horizon_t: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl SimConfig {
    pub fn new(step_h: f64, horizon_t: f64, n_paths: usize, master_seed: u64) -> Self {
        SimConfig { step_h, horizon_t, n_paths, master_seed, scheme: Scheme::ResolventSplit, record_stride: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_h > 0.0) || !self.step_h.is_finite() {
            return Err(invalid("step_h", "must be positive"));
        }
        if !(self.horizon_t > 0.0) || !self.horizon_t.is_finite() {
            return Err(invalid("horizon_t", "must be positive"));
        }
        if self.step_h > self.horizon_t {
            return Err(invalid("step_h", "must not exceed horizon_t"));
        }
        if self.n_paths == 0 {
            return Err(invalid("n_paths", "must be >= 1"));
        }
        if self.record_stride == 0 {
            return Err(invalid("record_stride", "must be >= 1"));
        }
        if let Scheme::YosidaEuler { lambda_n } = self.scheme {
            if !(lambda_n > 0.0) {
                return Err(invalid("lambda_n", "must be positive"));
            }
            if self.step_h / lambda_n > 1.0 + 1e-12 {
                return Err(invalid("lambda_n", "step_h / lambda_n must be <= 1 for stability"));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon_t / self.step_h).round().max(1.0) as usize
    }

    /// Step indices at which states are recorded: every `record_stride`-th step and the last one.
    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut steps: Vec<usize> = (0..=n).step_by(self.record_stride).collect();
        if *steps.last().unwrap() != n {
            steps.push(n);
        }
        steps
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self)
    }
}

/// A path whose state became non-finite or overflowed; it is frozen from `step` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFlag {
    pub path: usize,
    pub step: usize,
    pub reason: String,
}

/// One explicit time step of either scheme, with scratch buffers.
pub(crate) struct Stepper<'a, C: Coefficients + ?Sized> {
    model: &'a C,
    resolvent: PreparedResolvent,
    yosida_lambda: Option<f64>,
    h: f64,
    drift: Vec<f64>,
    noise: Vec<f64>,
    pred: Vec<f64>,
}

impl<'a, C: Coefficients + ?Sized> Stepper<'a, C> {
    pub(crate) fn new(model: &'a C, op: &OperatorSpec, scheme: &Scheme, h: f64) -> Result<Self> {
        let (resolvent, yosida_lambda) = match scheme {
            Scheme::ResolventSplit => (op.prepare(h)?, None),
            Scheme::YosidaEuler { lambda_n } => (op.prepare(*lambda_n)?, Some(*lambda_n)),
        };
        let d = model.dim_x();
        Ok(Stepper {
            model,
            resolvent,
            yosida_lambda,
            h,
            drift: vec![0.0; d],
            noise: vec![0.0; d],
            pred: vec![0.0; d],
        })
    }

    /// Advances `x` by one step with increment `dw`, optionally adding `extra`
    /// to the drift. Returns `|ΔK|` for the step.
    #[inline]
    pub(crate) fn step(&mut self, x: &mut [f64], dw: &[f64], extra: Option<&[f64]>) -> f64 {
        let h = self.h;
        self.model.drift_into(x, &mut self.drift);
        if let Some(e) = extra {
            for (b, v) in self.drift.iter_mut().zip(e) {
                *b += v;
            }
        }
        self.model.diffusion_apply_into(x, dw, &mut self.noise);
        match self.yosida_lambda {
            None => {
                for i in 0..x.len() {
                    self.pred[i] = x[i] + h * self.drift[i] + self.noise[i];
                }
                self.resolvent.apply_into(&self.pred, x);
                if self.resolvent.is_identity() {
                    0.0
                } else {
                    dist(&self.pred, x)
                }
            }
            Some(lambda) => {
                // pred holds J_λ(x); A_λ(x) = (x - J_λ x) / λ
                self.resolvent.apply_into(x, &mut self.pred);
                let mut dk = 0.0;
                for i in 0..x.len() {
                    let a = (x[i] - self.pred[i]) / lambda;
                    dk += (h * a) * (h * a);
                    x[i] += h * (self.drift[i] - a) + self.noise[i];
                }
                dk.sqrt()
            }
        }
    }
}

#[inline]
pub(crate) fn state_is_bad(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite()) || norm_sq(x) > OVERFLOW_GUARD * OVERFLOW_GUARD
}

/// Per-path output of `run_path`.
pub(crate) struct PathRecord {
    pub states: Vec<f64>,
    pub kvar: Vec<f64>,
    pub flag: Option<PathFlag>,
}

/// Simulates one path, calling `visit(step, x, kvar)` at step 0 and after every step.
pub(crate) fn run_path<C: Coefficients + ?Sized>(
    model: &C,
    op: &OperatorSpec,
    x0: &[f64],
    config: &SimConfig,
    path: usize,
    stream: u64,
    mut visit: impl FnMut(usize, &[f64], f64),
) -> Result<Option<PathFlag>> {
    let n = model.dim_w();
    let mut stepper = Stepper::new(model, op, &config.scheme, config.step_h)?;
    let mut rng = substream(config.master_seed, stream);
    let sd = config.step_h.sqrt();
    let mut dw = vec![0.0; n];
    let mut x = x0.to_vec();
    let mut prev = x.clone();
    let mut kvar = 0.0;
    let mut flag = None;
    visit(0, &x, kvar);
    for k in 1..=config.n_steps() {
        fill_normal(&mut rng, sd, &mut dw);
        if flag.is_none() {
            prev.copy_from_slice(&x);
            let dk = stepper.step(&mut x, &dw, None);
            if state_is_bad(&x) || !dk.is_finite() {
                x.copy_from_slice(&prev);
                flag = Some(PathFlag { path, step: k, reason: "non-finite or overflowing state".into() });
            } else {
                kvar += dk;
            }
        }
        visit(k, &x, kvar);
    }
    Ok(flag)
}

fn record_path<C: Coefficients + ?Sized>(
    model: &C,
    op: &OperatorSpec,
    x0: &[f64],
    config: &SimConfig,
    path: usize,
    record_steps: &[usize],
) -> Result<PathRecord> {
    let d = model.dim_x();
    let mut states = Vec::with_capacity(record_steps.len() * d);
    let mut kv = Vec::with_capacity(record_steps.len());
    let mut next = 0;
    let flag = run_path(model, op, x0, config, path, path as u64, |k, x, kvar| {
        if next < record_steps.len() && record_steps[next] == k {
            states.extend_from_slice(x);
            kv.push(kvar);
            next += 1;
        }
    })?;
    Ok(PathRecord { states, kvar: kv, flag })
}

/// Batch of discretized trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub dim: usize,
    pub n_paths: usize,
    pub times: Vec<f64>,
    /// `n_paths × n_times × dim`, path-major.
    pub states: Vec<f64>,
    /// `n_paths × n_times`, accumulated `|ΔK|`.
    pub k_variation: Vec<f64>,
    pub flags: Vec<PathFlag>,
    pub model_fingerprint: String,
    pub config_fingerprint: String,
    pub scheme: Scheme,
    pub master_seed: u64,
    pub normal_method: String,
}

impl PathEnsemble {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, path: usize, time_index: usize) -> &[f64] {
        let off = (path * self.n_times() + time_index) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn kvar(&self, path: usize, time_index: usize) -> f64 {
        self.k_variation[path * self.n_times() + time_index]
    }

    /// All path states at one recorded time.
    pub fn slice_at(&self, time_index: usize) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_paths).map(move |p| self.state(p, time_index))
    }

    /// Index of the recorded time closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn is_flagged(&self, path: usize) -> bool {
        self.flags.iter().any(|f| f.path == path)
    }
}

pub(crate) fn check_x0(op: &OperatorSpec, x0: &[f64], dim: usize) -> Result<()> {
    if x0.len() != dim {
        return Err(MsdeError::Dimension { expected: dim, got: x0.len() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x0", "must be finite"));
    }
    let proj = crate::operators::project_domain(op, x0);
    if dist(&proj, x0) > 1e-12 {
        return Err(MsdeError::OutsideDomain { point: x0.to_vec() });
    }
    Ok(())
}

pub(crate) fn simulate_with<C: Coefficients + ?Sized>(
    coeffs: &C,
    op: &OperatorSpec,
    model_fingerprint: String,
    x0: &[f64],
    config: &SimConfig,
) -> Result<PathEnsemble> {
    config.validate()?;
    check_x0(op, x0, coeffs.dim_x())?;
    let steps = config.record_steps();
    let records: Vec<PathRecord> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| record_path(coeffs, op, x0, config, p, &steps))
        .collect::<Result<_>>()?;
    let mut states = Vec::with_capacity(config.n_paths * steps.len() * coeffs.dim_x());
    let mut kvar = Vec::with_capacity(config.n_paths * steps.len());
    let mut flags = Vec::new();
    for r in records {
        states.extend(r.states);
        kvar.extend(r.kvar);
        flags.extend(r.flag);
    }
    Ok(PathEnsemble {
        dim: coeffs.dim_x(),
        n_paths: config.n_paths,
        times: steps.iter().map(|&k| k as f64 * config.step_h).collect(),
        states,
        k_variation: kvar,
        flags,
        model_fingerprint,
        config_fingerprint: config.fingerprint(),
        scheme: config.scheme.clone(),
        master_seed: config.master_seed,
        normal_method: NORMAL_METHOD.to_string(),
    })
}

/// Simulates `config.n_paths` independent paths of the model started at `x0`.
pub fn simulate_paths(model: &ModelSpec, x0: &[f64], config: &SimConfig) -> Result<PathEnsemble> {
    model.validate()?;
    simulate_with(model, &model.operator, model.fingerprint(), x0, config)
}

/// Coefficients of the pinned equation `dY + A(Y)dt ∋ -m(Y - y0)dt + σ(Y)dW`.
pub(crate) struct Pinned<'a> {
    pub base: &'a ModelSpec,
    pub strength: f64,
    pub target: &'a [f64],
}

impl Coefficients for Pinned<'_> {
    fn dim_x(&self) -> usize {
        self.base.dim_x
    }

    fn dim_w(&self) -> usize {
        self.base.dim_w
    }

    #[inline]
    fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = -self.strength * (x[i] - self.target[i]);
        }
    }

    #[inline]
    fn diffusion_apply_into(&self, x: &[f64], dw: &[f64], out: &mut [f64]) {
        self.base.diffusion_apply_into(x, dw, out)
    }

    fn diffusion(&self, x: &[f64]) -> Matrix {
        self.base.diffusion(x)
    }

    fn additive_noise(&self) -> bool {
        self.base.additive_noise()
    }
}

/// Constants of the pinned second-moment bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinnedConstants {
    /// `C(m) = 2(m - 2λ1² - 1/2)`
    pub c_m: f64,
    /// `C0 = 2λ1²(1 + 2|y0|²) + |A°(y0)|²`
    pub c0: f64,
}

impl PinnedConstants {
    pub fn new(op: &OperatorSpec, m: f64, y0: &[f64], lambda1: f64) -> Result<Self> {
        let c_m = 2.0 * (m - 2.0 * lambda1 * lambda1 - 0.5);
        let a0 = minimal_section(op, y0)?;
        let c0 = 2.0 * lambda1 * lambda1 * (1.0 + 2.0 * norm_sq(y0)) + norm_sq(&a0);
        Ok(PinnedConstants { c_m, c0 })
    }

    /// `e^{-C(m)t}|x0-y0|² + C0/C(m)`
    pub fn bound(&self, t: f64, initial_sq_dist: f64) -> f64 {
        (-self.c_m * t).exp() * initial_sq_dist + self.c0 / self.c_m
    }
}

pub(crate) fn check_pin_target(op: &OperatorSpec, y0: &[f64]) -> Result<()> {
    if !op.is_interior(y0) {
        return Err(MsdeError::NotInterior(y0.to_vec()));
    }
    Ok(())
}

/// Ensemble of the pinned process started at `x0`, pulled toward the interior point `y0`.
/// Uses the operator and diffusion of `model`, and `λ1` from its constants.
pub fn simulate_pinned(
    model: &ModelSpec,
    m: f64,
    y0: &[f64],
    x0: &[f64],
    config: &SimConfig,
) -> Result<PathEnsemble> {
    model.validate()?;
    if !(m > 0.0) {
        return Err(invalid("m", "must be positive"));
    }
    if y0.len() != model.dim_x {
        return Err(MsdeError::Dimension { expected: model.dim_x, got: y0.len() });
    }
    check_pin_target(&model.operator, y0)?;
    let consts = PinnedConstants::new(&model.operator, m, y0, model.constants.lambda1)?;
    if consts.c_m <= 0.0 {
        return Err(MsdeError::PinTooWeak { c_m: consts.c_m });
    }
    let pinned = Pinned { base: model, strength: m, target: y0 };
    let fp = crate::fingerprint(&(model, m, y0));
    simulate_with(&pinned, &model.operator, fp, x0, config)
}

/// Compares the empirical `E|Y_t - y0|²` of a pinned ensemble with
/// `e^{-C(m)t}|x0-y0|² + C0/C(m)` at every recorded time (slack `3·SE`).
pub fn pinned_moment_check(
    ensemble: &PathEnsemble,
    op: &OperatorSpec,
    m: f64,
    y0: &[f64],
    x0: &[f64],
    lambda1: f64,
) -> Result<BoundReport> {
    let consts = PinnedConstants::new(op, m, y0, lambda1)?;
    let init = norm_sq(&crate::linalg::sub(x0, y0));
    let mut report = BoundReport::new("pinned_moment");
    report.constants.push(("C(m)".into(), consts.c_m));
    report.constants.push(("C0".into(), consts.c0));
    report.constants.push(("m".into(), m));
    report.constants.push(("lambda1".into(), lambda1));
    for (ti, &t) in ensemble.times.iter().enumerate() {
        let est = MeanSe::of_iter(ensemble.slice_at(ti).map(|y| {
            y.iter().zip(y0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        }));
        report.checks.push(BoundCheck::upper("E|Y_t-y0|^2", Some(t), est, consts.bound(t, init), 3.0));
    }
    Ok(report)
}

/// Strong error of the scheme at several step sizes against a much finer reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub step_sizes: Vec<f64>,
    pub reference_step: f64,
    pub errors: Vec<MeanSe>,
    pub fitted_order: f64,
    pub r_squared: f64,
}

/// Ratio between the finest level and the reference grid.
const REFERENCE_REFINEMENT: usize = 16;

fn integrate_increments<C: Coefficients + ?Sized>(
    stepper: &mut Stepper<'_, C>,
    x0: &[f64],
    increments: &[f64],
    n: usize,
) -> Vec<f64> {
    let mut x = x0.to_vec();
    for dw in increments.chunks_exact(n) {
        stepper.step(&mut x, dw, None);
    }
    x
}

/// Couples step sizes `base_h / 2^l` (`l < levels`) to a reference grid through
/// shared Brownian increments and fits the empirical strong order.
pub fn strong_error_table(
    model: &ModelSpec,
    x0: &[f64],
    base_h: f64,
    levels: usize,
    horizon_t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    model.validate()?;
    if levels < 3 {
        return Err(invalid("levels", "must be >= 3"));
    }
    if n_paths == 0 || !(base_h > 0.0) || base_h > horizon_t {
        return Err(invalid("base_h", "need n_paths >= 1 and 0 < base_h <= T"));
    }
    check_x0(&model.operator, x0, model.dim_x)?;
    let coarse_steps = (horizon_t / base_h).round() as usize;
    let finest_factor = 1usize << (levels - 1);
    let ref_factor = finest_factor * REFERENCE_REFINEMENT;
    let n_ref = coarse_steps * ref_factor;
    let h_ref = horizon_t / n_ref as f64;
    let step_sizes: Vec<f64> = (0..levels).map(|l| horizon_t / (coarse_steps << l) as f64).collect();
    let n = model.dim_w;
    let scheme = Scheme::ResolventSplit;

    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let mut rng = substream(seed, p as u64);
            let mut fine = vec![0.0; n_ref * n];
            fill_normal(&mut rng, h_ref.sqrt(), &mut fine);
            let mut reference = Stepper::new(model, &model.operator, &scheme, h_ref)?;
            let x_ref = integrate_increments(&mut reference, x0, &fine, n);
            let mut errs = Vec::with_capacity(levels);
            for (l, &h) in step_sizes.iter().enumerate() {
                let group = ref_factor >> l;
                let coarse: Vec<f64> = fine
                    .chunks_exact(group * n)
                    .flat_map(|block| {
                        (0..n).map(move |j| block.iter().skip(j).step_by(n).sum::<f64>())
                    })
                    .collect();
                let mut stepper = Stepper::new(model, &model.operator, &scheme, h)?;
                let x = integrate_increments(&mut stepper, x0, &coarse, n);
                errs.push(dist(&x, &x_ref));
            }
            Ok(errs)
        })
        .collect::<Result<_>>()?;

    let errors: Vec<MeanSe> =
        (0..levels).map(|l| MeanSe::of_iter(per_path.iter().map(|e| e[l]))).collect();
    let lx: Vec<f64> = step_sizes.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.mean.ln()).collect();
    let fit = linear_fit(&lx, &ly).ok_or_else(|| invalid("levels", "degenerate fit"))?;
    Ok(ConvergenceTable {
        step_sizes,
        reference_step: h_ref,
        errors,
        fitted_order: fit.slope,
        r_squared: fit.r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupMomentReport {
    /// Empirical mean over paths of `sup_{x in grid, s <= t_max} |X_s(x)|^p`.
    pub value: f64,
    pub se: f64,
    pub start_points: usize,
    pub overflow_paths: usize,
}

/// Finiteness probe for `E[sup_{x∈D_r, s≤t} |X_s(x)|^p]` on a finite grid of
/// starting points driven by shared noise. `grid_points` is the number of grid
/// nodes per axis on `[-r, r]^d`; nodes outside `cl D(A) ∩ {|x| ≤ r}` are dropped.
pub fn sup_moment_probe(
    model: &ModelSpec,
    radius_r: f64,
    exponent_p: f64,
    t_max: f64,
    grid_points: usize,
    config: &SimConfig,
) -> Result<SupMomentReport> {
    model.validate()?;
    let d = model.dim_x;
    if !(exponent_p > d as f64) {
        return Err(invalid("exponent_p", format!("must exceed the dimension {d}")));
    }
    if grid_points == 0 || !(radius_r > 0.0) {
        return Err(invalid("grid_points", "the starting grid is empty"));
    }
    let axis: Vec<f64> = if grid_points == 1 {
        vec![0.0]
    } else {
        (0..grid_points).map(|i| -radius_r + 2.0 * radius_r * i as f64 / (grid_points - 1) as f64).collect()
    };
    let mut starts = Vec::new();
    let total = grid_points.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let x: Vec<f64> = (0..d)
            .map(|_| {
                let v = axis[rem % grid_points];
                rem /= grid_points;
                v
            })
            .collect();
        if norm(&x) <= radius_r + 1e-12 && model.operator.in_domain(&x, 0.0) {
            starts.push(x);
        }
    }
    if starts.is_empty() {
        return Err(invalid("grid_points", "no grid node lies in the domain ball"));
    }
    let cfg = SimConfig { horizon_t: t_max, ..config.clone() };
    cfg.validate()?;
    let n = model.dim_w;
    let results: Vec<(f64, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| -> Result<(f64, bool)> {
            let mut rng = substream(cfg.master_seed, p as u64);
            let mut steppers: Vec<_> = starts
                .iter()
                .map(|_| Stepper::new(model, &model.operator, &cfg.scheme, cfg.step_h))
                .collect::<Result<_>>()?;
            let mut xs = starts.clone();
            let mut sup = xs.iter().map(|x| norm(x).powf(exponent_p)).fold(0.0, f64::max);
            let mut dw = vec![0.0; n];
            let mut overflow = false;
            for _ in 0..cfg.n_steps() {
                fill_normal(&mut rng, cfg.step_h.sqrt(), &mut dw);
                for (x, st) in xs.iter_mut().zip(steppers.iter_mut()) {
                    st.step(x, &dw, None);
                    if state_is_bad(x) {
                        overflow = true;
                    } else {
                        sup = sup.max(norm(x).powf(exponent_p));
                    }
                }
                if overflow {
                    break;
                }
            }
            Ok((sup, overflow))
        })
        .collect::<Result<_>>()?;
    let est = MeanSe::of_iter(results.iter().map(|r| r.0));
    Ok(SupMomentReport {
        value: est.mean,
        se: est.se,
        start_points: starts.len(),
        overflow_paths: results.iter().filter(|r| r.1).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Diffusion, Drift, HypothesisConstants};
    use crate::operators::ConvexSet;

    fn consts() -> HypothesisConstants {
        HypothesisConstants {
            lambda0: 0.0,
            lambda1: 1.0,
            lambda2: Some(1.0),
            lambda3: 2.0,
            lambda4: 2.0,
            p: 2.0,
            eta: 1.0,
        }
    }

    fn frozen(d: usize) -> ModelSpec {
        ModelSpec {
            dim_x: d,
            dim_w: d,
            operator: OperatorSpec::Zero,
            drift: Drift::Constant { vector: vec![0.0; d] },
            diffusion: Diffusion::ConstantMatrix { matrix: Matrix::zeros(d, d) },
            constants: consts(),
        }
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let cfg = SimConfig::new(0.01, 1.0, 5, 3).with_stride(10);
        let ens = simulate_paths(&frozen(2), &[0.3, -1.0], &cfg).unwrap();
        assert_eq!(ens.n_times(), 11);
        for p in 0..5 {
            for t in 0..ens.n_times() {
                assert_eq!(ens.state(p, t), &[0.3, -1.0]);
                assert_eq!(ens.kvar(p, t), 0.0);
            }
        }
    }

    #[test]
    fn x0_outside_domain_is_rejected() {
        let mut m = frozen(1);
        m.operator = OperatorSpec::normal_cone(ConvexSet::Box { lower: vec![0.0], upper: vec![1.0] });
        let cfg = SimConfig::new(0.1, 1.0, 1, 0);
        assert!(matches!(simulate_paths(&m, &[2.0], &cfg), Err(MsdeError::OutsideDomain { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(2.0, 1.0, 1, 0).validate().is_err());
        assert!(SimConfig::new(0.1, 1.0, 0, 0).validate().is_err());
        let unstable = SimConfig::new(0.1, 1.0, 1, 0).with_scheme(Scheme::YosidaEuler { lambda_n: 0.01 });
        assert!(unstable.validate().is_err());
        let ok = SimConfig::new(0.01, 1.0, 1, 0).with_scheme(Scheme::YosidaEuler { lambda_n: 0.01 });
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn overflow_is_flagged_not_dropped() {
        let mut m = frozen(1);
        // b(x) = 50x with h = 1 blows up geometrically
        m.drift = Drift::Linear { matrix: Matrix::scaled_identity(1, -50.0) };
        let cfg = SimConfig::new(1.0, 200.0, 2, 0).with_stride(50);
        let ens = simulate_paths(&m, &[1.0], &cfg).unwrap();
        assert_eq!(ens.flags.len(), 2);
        assert_eq!(ens.n_paths, 2);
        let last = ens.state(0, ens.n_times() - 1)[0];
        assert!(last.is_finite());
    }

    #[test]
    fn pinned_constants_match_formulas() {
        let c = PinnedConstants::new(&OperatorSpec::Zero, 10.0, &[0.0], 1.0).unwrap();
        assert_eq!(c.c_m, 15.0);
        assert_eq!(c.c0, 2.0);
        let b = c.bound(1.0, 1.0);
        assert!((b - ((-15.0f64).exp() + 2.0 / 15.0)).abs() < 1e-15);
        assert!((b - 0.13334).abs() < 1e-5);
    }

    #[test]
    fn pinned_deterministic_decay() {
        let m = frozen(1);
        let cfg = SimConfig::new(1e-4, 0.5, 1, 0).with_stride(500);
        let ens = simulate_pinned(&m, 10.0, &[0.0], &[1.0], &cfg).unwrap();
        for (ti, &t) in ens.times.iter().enumerate() {
            let y = ens.state(0, ti)[0];
            // Euler on y' = -10y: relative error of y² about 100·t·h
            assert!((y * y - (-20.0 * t).exp()).abs() < 1e-2 * (-20.0 * t).exp() + 1e-12);
        }
        let rep = pinned_moment_check(&ens, &m.operator, 10.0, &[0.0], &[1.0], 1.0).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.checks[0].empirical, 1.0);
    }

    #[test]
    fn weak_pin_is_rejected() {
        let m = frozen(1);
        let cfg = SimConfig::new(0.1, 1.0, 1, 0);
        assert!(matches!(
            simulate_pinned(&m, 2.0, &[0.0], &[1.0], &cfg),
            Err(MsdeError::PinTooWeak { .. })
        ));
    }

    #[test]
    fn pin_target_must_be_interior() {
        let mut m = frozen(1);
        m.operator = OperatorSpec::normal_cone(ConvexSet::Box { lower: vec![0.0], upper: vec![1.0] });
        let cfg = SimConfig::new(0.1, 1.0, 1, 0);
        assert!(matches!(
            simulate_pinned(&m, 10.0, &[0.0], &[0.5], &cfg),
            Err(MsdeError::NotInterior(_))
        ));
    }

    #[test]
    fn sup_probe_rejects_empty_grid_and_low_exponent() {
        let m = frozen(1);
        let cfg = SimConfig::new(0.1, 1.0, 4, 0);
        assert!(sup_moment_probe(&m, 1.0, 2.0, 1.0, 0, &cfg).is_err());
        assert!(sup_moment_probe(&m, 1.0, 0.5, 1.0, 3, &cfg).is_err());
    }

    #[test]
    fn sup_probe_deterministic_decay() {
        let mut m = frozen(1);
        m.drift = Drift::Linear { matrix: Matrix::identity(1) };
        let cfg = SimConfig::new(0.01, 1.0, 4, 0);
        let rep = sup_moment_probe(&m, 1.0, 2.0, 1.0, 5, &cfg).unwrap();
        assert_eq!(rep.start_points, 5);
        assert!((rep.value - 1.0).abs() < 1e-15);
        assert_eq!(rep.overflow_paths, 0);
    }

    #[test]
    fn deterministic_euler_order_one() {
        let mut m = frozen(1);
        m.drift = Drift::PolyConfining { c1: 1.0, exponent: 3.0, matrix: Matrix::identity(1) };
        let tab = strong_error_table(&m, &[1.0], 0.1, 4, 1.0, 2, 0).unwrap();
        assert!((tab.fitted_order - 1.0).abs() < 0.1, "order {}", tab.fitted_order);
    }
}
