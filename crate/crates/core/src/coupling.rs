//! Drift-transform coupling and its Girsanov density.
//!
//! `X` solves the original equation from `x0`. `Y` starts at `y0`, is driven by
//! the same Brownian increments, and carries the extra drift
//! `|x0-y0|^α (X-Y)/|X-Y|` until the pair meets. The density
//!
//! ```text
//! U_T = exp( ∫_0^{T∧τ} <dW, H(X,Y)> - ½ ∫_0^{T∧τ} |H(X,Y)|² ds ),
//! H(x, y) = |x0-y0|^α σ*(y) [σσ*(y)]^{-1} (x-y)/|x-y|
//! ```
//!
//! is accumulated along each path with left-point (Itô) sums.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MsdeError, Result};
use crate::linalg::{dist, dot, norm, norm_sq, sub};
use crate::model::{check_h3, modulus_rho, Coefficients, ModelSpec};
use crate::operators::OperatorSpec;
use crate::rng::{fill_normal, substream};
use crate::simulate::{
    check_pin_target, check_x0, run_path, state_is_bad, PathFlag, Pinned, PinnedConstants, SimConfig,
    Stepper,
};
use crate::stats::{clopper_pearson, linear_fit, BoundCheck, MeanSe};

/// Stream ids for the second ensemble of an independent two-point comparison.
const SECOND_ENSEMBLE_STREAM: u64 = 1 << 61;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingParams {
    pub alpha: f64,
    pub eps_couple: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub horizon_t: f64,
    pub lambda2: f64,
    /// Localization radius `N`: coupling drift and Girsanov sums freeze once `|Y| >= N`.
    #[serde(default)]
    pub localization_radius: Option<f64>,
}

impl CouplingParams {
    /// Defaults: `α = e^{-λ0 T}/2`, `eps = √h / 10`, `λ2` from the model constants.
    pub fn new(model: &ModelSpec, x0: &[f64], y0: &[f64], horizon_t: f64, step_h: f64) -> Result<Self> {
        let lambda2 = model
            .constants
            .lambda2
            .ok_or_else(|| invalid("lambda2", "the coupling needs a declared bound on ‖[σσ*]^{-1}‖"))?;
        Ok(CouplingParams {
            alpha: default_alpha(model.constants.lambda0, horizon_t),
            eps_couple: step_h.sqrt() / 10.0,
            x0: x0.to_vec(),
            y0: y0.to_vec(),
            horizon_t,
            lambda2,
            localization_radius: None,
        })
    }

    pub fn separation(&self) -> f64 {
        dist(&self.x0, &self.y0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.eps_couple > 0.0) {
            return Err(invalid("eps_couple", "must be positive"));
        }
        if !(self.lambda2 > 0.0) {
            return Err(invalid("lambda2", "must be positive"));
        }
        if self.x0.len() != self.y0.len() {
            return Err(MsdeError::Dimension { expected: self.x0.len(), got: self.y0.len() });
        }
        if let Some(n) = self.localization_radius {
            if !(n > 0.0) {
                return Err(invalid("localization_radius", "must be positive"));
            }
        }
        Ok(())
    }

    /// Whether the detection radius is small compared with the initial separation.
    pub fn eps_is_small(&self) -> bool {
        let s = self.separation();
        s == 0.0 || self.eps_couple <= 0.1 * s
    }
}

/// `α = e^{-λ0 T} / 2`
pub fn default_alpha(lambda0: f64, horizon_t: f64) -> f64 {
    (-lambda0 * horizon_t).exp() / 2.0
}

/// Paired trajectories with coupling times and Girsanov accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRun {
    pub dim: usize,
    pub n_paths: usize,
    pub times: Vec<f64>,
    /// `n_paths × n_times × dim`
    pub x_states: Vec<f64>,
    pub y_states: Vec<f64>,
    /// Coupling time per path; `+∞` if the pair did not meet by `T`.
    pub coupling_time: Vec<f64>,
    /// `Σ <ΔW_k, H_k>` per path.
    pub stochastic_integral: Vec<f64>,
    /// `Σ |H_k|² h` per path.
    pub energy: Vec<f64>,
    pub localized_out: Vec<bool>,
    pub flags: Vec<PathFlag>,
    pub params: CouplingParams,
    pub model_fingerprint: String,
    pub config_fingerprint: String,
}

impl CouplingRun {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn x(&self, path: usize, ti: usize) -> &[f64] {
        let off = (path * self.n_times() + ti) * self.dim;
        &self.x_states[off..off + self.dim]
    }

    pub fn y(&self, path: usize, ti: usize) -> &[f64] {
        let off = (path * self.n_times() + ti) * self.dim;
        &self.y_states[off..off + self.dim]
    }

    pub fn distance(&self, path: usize, ti: usize) -> f64 {
        dist(self.x(path, ti), self.y(path, ti))
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.stochastic_integral.iter().zip(&self.energy).map(|(i, e)| i - 0.5 * e).collect()
    }
}

struct CoupledPath {
    xs: Vec<f64>,
    ys: Vec<f64>,
    tau: f64,
    integral: f64,
    energy: f64,
    localized_out: bool,
    flag: Option<PathFlag>,
}

/// `H = scale · σ*(y) [σσ*(y)]^{-1} u` written into `out`.
fn girsanov_drift<C: Coefficients + ?Sized>(model: &C, y: &[f64], u: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
    let sigma = model.diffusion(y);
    let inv = sigma.gram().inverse()?;
    let v = inv.mul_vec(u);
    sigma.mul_transpose_vec_into(&v, out);
    out.iter_mut().for_each(|o| *o *= scale);
    Ok(())
}

fn couple_path<C: Coefficients + ?Sized>(
    model: &C,
    op: &OperatorSpec,
    params: &CouplingParams,
    config: &SimConfig,
    path: usize,
    record_steps: &[usize],
) -> Result<CoupledPath> {
    let d = model.dim_x();
    let n = model.dim_w();
    let h = config.step_h;
    let mut sx = Stepper::new(model, op, &config.scheme, h)?;
    let mut sy = Stepper::new(model, op, &config.scheme, h)?;
    let mut rng = substream(config.master_seed, path as u64);
    let strength = params.separation().powf(params.alpha);
    // H is constant in y for additive noise up to the unit direction
    let constant_inv = if model.additive_noise() {
        let sigma = model.diffusion(&params.y0);
        Some((sigma.gram().inverse()?, sigma))
    } else {
        None
    };

    let mut x = params.x0.clone();
    let mut y = params.y0.clone();
    let mut dw = vec![0.0; n];
    let mut unit = vec![0.0; d];
    let mut extra = vec![0.0; d];
    let mut hvec = vec![0.0; n];
    let mut coupled = dist(&x, &y) == 0.0;
    let mut tau = if coupled { 0.0 } else { f64::INFINITY };
    let (mut integral, mut energy) = (0.0, 0.0);
    let mut localized_out = false;
    let mut flag = None;
    let mut xs = Vec::with_capacity(record_steps.len() * d);
    let mut ys = Vec::with_capacity(record_steps.len() * d);
    let mut next = 0;
    let mut record = |k: usize, x: &[f64], y: &[f64], next: &mut usize| {
        if *next < record_steps.len() && record_steps[*next] == k {
            xs.extend_from_slice(x);
            ys.extend_from_slice(y);
            *next += 1;
        }
    };
    record(0, &x, &y, &mut next);

    for k in 1..=config.n_steps() {
        fill_normal(&mut rng, h.sqrt(), &mut dw);
        if flag.is_some() {
            record(k, &x, &y, &mut next);
            continue;
        }
        if coupled {
            sx.step(&mut x, &dw, None);
            y.copy_from_slice(&x);
        } else {
            if let Some(radius) = params.localization_radius {
                if norm(&y) >= radius {
                    localized_out = true;
                }
            }
            let active = !localized_out;
            if active {
                let r = dist(&x, &y);
                for i in 0..d {
                    unit[i] = (x[i] - y[i]) / r;
                    extra[i] = strength * unit[i];
                }
                match &constant_inv {
                    Some((inv, sigma)) => {
                        let v = inv.mul_vec(&unit);
                        sigma.mul_transpose_vec_into(&v, &mut hvec);
                        hvec.iter_mut().for_each(|o| *o *= strength);
                    }
                    None => girsanov_drift(model, &y, &unit, strength, &mut hvec)?,
                }
                integral += dot(&dw, &hvec);
                energy += norm_sq(&hvec) * h;
            }
            sx.step(&mut x, &dw, None);
            sy.step(&mut y, &dw, if active { Some(&extra) } else { None });
            if dist(&x, &y) <= params.eps_couple {
                coupled = true;
                tau = k as f64 * h;
                y.copy_from_slice(&x);
            }
        }
        if state_is_bad(&x) || state_is_bad(&y) {
            flag = Some(PathFlag { path, step: k, reason: "non-finite or overflowing state".into() });
        }
        record(k, &x, &y, &mut next);
    }
    Ok(CoupledPath { xs, ys, tau, integral, energy, localized_out, flag })
}

/// Simulates the coupled pair `(X, Y)` for every path.
pub fn simulate_coupled(model: &ModelSpec, params: &CouplingParams, config: &SimConfig) -> Result<CouplingRun> {
    model.validate()?;
    config.validate()?;
    params.validate()?;
    check_x0(&model.operator, &params.x0, model.dim_x)?;
    check_x0(&model.operator, &params.y0, model.dim_x)?;
    let radius = norm(&params.x0).max(norm(&params.y0)) + 1.0;
    let ellipticity = check_h3(model, 256, radius, config.master_seed)?;
    if !ellipticity.passed() {
        return Err(invalid("diffusion", format!("coupling needs ellipticity: {}", ellipticity.summary())));
    }
    let steps = config.record_steps();
    let paths: Vec<CoupledPath> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| couple_path(model, &model.operator, params, config, p, &steps))
        .collect::<Result<_>>()?;
    let mut run = CouplingRun {
        dim: model.dim_x,
        n_paths: config.n_paths,
        times: steps.iter().map(|&k| k as f64 * config.step_h).collect(),
        x_states: Vec::with_capacity(config.n_paths * steps.len() * model.dim_x),
        y_states: Vec::with_capacity(config.n_paths * steps.len() * model.dim_x),
        coupling_time: Vec::with_capacity(config.n_paths),
        stochastic_integral: Vec::with_capacity(config.n_paths),
        energy: Vec::with_capacity(config.n_paths),
        localized_out: Vec::with_capacity(config.n_paths),
        flags: Vec::new(),
        params: params.clone(),
        model_fingerprint: model.fingerprint(),
        config_fingerprint: config.fingerprint(),
    };
    for p in paths {
        run.x_states.extend(p.xs);
        run.y_states.extend(p.ys);
        run.coupling_time.push(p.tau);
        run.stochastic_integral.push(p.integral);
        run.energy.push(p.energy);
        run.localized_out.push(p.localized_out);
        run.flags.extend(p.flag);
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovReport {
    pub weights: Vec<f64>,
    pub mean: MeanSe,
    pub second_moment: MeanSe,
    /// `exp(λ2 T |x0-y0|^{2α})`
    pub second_moment_bound: f64,
    pub mean_check: bool,
    pub second_moment_check: BoundCheck,
}

impl GirsanovReport {
    pub fn passed(&self) -> bool {
        self.mean_check && self.second_moment_check.pass
    }
}

/// Per-path `U_T` with the martingale identity `E U_T = 1` and the bound
/// `E U_T² <= exp(λ2 T |x0-y0|^{2α})`, both at `3·SE` slack.
pub fn girsanov_weight(run: &CouplingRun, params: &CouplingParams) -> Result<GirsanovReport> {
    if run.stochastic_integral.len() != run.n_paths || run.energy.len() != run.n_paths {
        return Err(MsdeError::MissingAccumulators);
    }
    let weights: Vec<f64> = run.log_weights().iter().map(|l| l.exp()).collect();
    let mean = MeanSe::of(&weights);
    let second_moment = MeanSe::of_iter(weights.iter().map(|w| w * w));
    let bound = (params.lambda2 * params.horizon_t * params.separation().powf(2.0 * params.alpha)).exp();
    Ok(GirsanovReport {
        mean_check: (mean.mean - 1.0).abs() <= 3.0 * mean.se,
        second_moment_check: BoundCheck::upper("E[U_T^2]", Some(params.horizon_t), second_moment, bound, 3.0),
        weights,
        mean,
        second_moment,
        second_moment_bound: bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub separation: f64,
    pub within_validity: bool,
    /// `E|X_{t∧τ} - Y_{t∧τ}| <= |x0-y0|^{exp(-λ0 t/2)}` per recorded time.
    pub distance_checks: Vec<BoundCheck>,
    /// `E(T∧τ)` against its bound; `None` when the bound is undefined.
    pub stopping_check: Option<BoundCheck>,
    pub prob_not_coupled: MeanSe,
    pub notes: Vec<String>,
}

impl CouplingReport {
    pub fn passed(&self) -> bool {
        self.within_validity
            && self.distance_checks.iter().all(|c| c.pass)
            && self.stopping_check.as_ref().is_none_or(|c| c.pass)
    }
}

/// Bihari exponent `exp(-λ0 t / 2)`.
pub fn bihari_exponent(lambda0: f64, t: f64) -> f64 {
    (-lambda0 * t / 2.0).exp()
}

/// `|x0-y0|^{1-α} + (λ0 T/2) ρ_η(|x0-y0|^{exp(-λ0 T/2)}) |x0-y0|^{-α}`
pub fn stopping_time_bound(separation: f64, alpha: f64, lambda0: f64, eta: f64, horizon_t: f64) -> Result<f64> {
    let first = separation.powf(1.0 - alpha);
    if lambda0 == 0.0 {
        return Ok(first);
    }
    let r = separation.powf(bihari_exponent(lambda0, horizon_t));
    Ok(first + lambda0 * horizon_t / 2.0 * modulus_rho(r, eta)? * separation.powf(-alpha))
}

/// Coupling distance and coupling time statistics against their bounds (`3·SE` slack).
pub fn coupling_time_stats(run: &CouplingRun, params: &CouplingParams, lambda0: f64, eta: f64) -> Result<CouplingReport> {
    let sep = params.separation();
    let mut notes = Vec::new();
    let within_validity = sep < eta;
    if !within_validity {
        notes.push(format!("outside bound validity: |x0-y0| = {sep} >= eta = {eta}"));
    }
    let mut distance_checks = Vec::with_capacity(run.n_times());
    for (ti, &t) in run.times.iter().enumerate() {
        let est = MeanSe::of_iter((0..run.n_paths).map(|p| run.distance(p, ti)));
        let bound = sep.powf(bihari_exponent(lambda0, t));
        distance_checks.push(BoundCheck::upper("E|X_t-Y_t|", Some(t), est, bound, 3.0));
    }
    let t_end = params.horizon_t;
    let stopped = MeanSe::of_iter(run.coupling_time.iter().map(|&tau| tau.min(t_end)));
    let stopping_check = match stopping_time_bound(sep, params.alpha, lambda0, eta, t_end) {
        Ok(b) if within_validity => Some(BoundCheck::upper("E(T∧τ)", Some(t_end), stopped, b, 3.0)),
        Ok(_) => None,
        Err(e) => {
            notes.push(format!("stopping-time bound undefined: {e}"));
            None
        }
    };
    let prob_not_coupled = MeanSe::of_iter(run.coupling_time.iter().map(|&tau| if tau > t_end { 1.0 } else { 0.0 }));
    Ok(CouplingReport { separation: sep, within_validity, distance_checks, stopping_check, prob_not_coupled, notes })
}

/// Bounded test functions `f` with `‖f‖_0 <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    /// Logistic-smoothed indicator of the ball `B(center, radius)`.
    SmoothedBall { center: Vec<f64>, radius: f64, width: f64 },
    TanhCoord { coord: usize },
    SignFirst,
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::SmoothedBall { center, radius, width } => {
                1.0 / (1.0 + ((dist(x, center) - radius) / width).exp())
            }
            TestFunction::TanhCoord { coord } => x[*coord].tanh(),
            TestFunction::SignFirst => {
                if x[0] > 0.0 {
                    1.0
                } else if x[0] < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub separation: f64,
    pub mean_x: MeanSe,
    pub mean_y: MeanSe,
    /// `|P_T f(x0) - P_T f(y0)|`
    pub gap: f64,
    pub se: f64,
    pub common_random_numbers: bool,
    /// `exp(-λ0 T)/4`
    pub predicted_exponent: f64,
}

fn terminal_values(
    model: &ModelSpec,
    x0: &[f64],
    config: &SimConfig,
    f: &TestFunction,
    stream_base: u64,
) -> Result<Vec<f64>> {
    let n_steps = config.n_steps();
    (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut value = 0.0;
            run_path(model, &model.operator, x0, config, p, stream_base + p as u64, |k, x, _| {
                if k == n_steps {
                    value = f.eval(x);
                }
            })?;
            Ok(value)
        })
        .collect()
}

/// Estimates `|P_T f(x0) - P_T f(y0)|` from two ensembles; `config.horizon_t` is `T`.
pub fn strong_feller_gap(
    model: &ModelSpec,
    x0: &[f64],
    y0: &[f64],
    f: &TestFunction,
    config: &SimConfig,
    common_random_numbers: bool,
) -> Result<GapReport> {
    model.validate()?;
    config.validate()?;
    check_x0(&model.operator, x0, model.dim_x)?;
    check_x0(&model.operator, y0, model.dim_x)?;
    let fx = terminal_values(model, x0, config, f, 0)?;
    let base_y = if common_random_numbers { 0 } else { SECOND_ENSEMBLE_STREAM };
    let fy = terminal_values(model, y0, config, f, base_y)?;
    let mean_x = MeanSe::of(&fx);
    let mean_y = MeanSe::of(&fy);
    let se = if common_random_numbers {
        MeanSe::of_iter(fx.iter().zip(&fy).map(|(a, b)| a - b)).se
    } else {
        mean_x.se.hypot(mean_y.se)
    };
    Ok(GapReport {
        separation: dist(x0, y0),
        gap: (mean_x.mean - mean_y.mean).abs(),
        se,
        mean_x,
        mean_y,
        common_random_numbers,
        predicted_exponent: (-model.constants.lambda0 * config.horizon_t).exp() / 4.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongFellerReport {
    pub gaps: Vec<GapReport>,
    pub predicted_exponent: f64,
    pub loglog_slope: f64,
    /// Gaps nonincreasing as the separation shrinks, up to `2·SE` per adjacent pair.
    pub monotone: bool,
    /// `slope >= exp(-λ0 T)/4 - 0.15`
    pub slope_ok: bool,
}

impl StrongFellerReport {
    pub fn passed(&self) -> bool {
        self.monotone && self.slope_ok
    }
}

/// Gap shape across a ladder of separations `y0 = x0 + s·direction`.
pub fn strong_feller_ladder(
    model: &ModelSpec,
    x0: &[f64],
    direction: &[f64],
    separations: &[f64],
    f: &TestFunction,
    config: &SimConfig,
    common_random_numbers: bool,
) -> Result<StrongFellerReport> {
    if separations.len() < 2 {
        return Err(invalid("separations", "need at least two separations"));
    }
    let dn = norm(direction);
    if !(dn > 0.0) {
        return Err(invalid("direction", "must be nonzero"));
    }
    let mut seps = separations.to_vec();
    seps.sort_by(|a, b| b.total_cmp(a));
    let gaps: Vec<GapReport> = seps
        .iter()
        .map(|s| {
            let y0: Vec<f64> = x0.iter().zip(direction).map(|(a, u)| a + s * u / dn).collect();
            strong_feller_gap(model, x0, &y0, f, config, common_random_numbers)
        })
        .collect::<Result<_>>()?;
    let monotone = gaps.windows(2).all(|w| w[1].gap <= w[0].gap + 2.0 * w[0].se.hypot(w[1].se));
    let lx: Vec<f64> = gaps.iter().map(|g| g.separation.ln()).collect();
    let ly: Vec<f64> = gaps.iter().map(|g| g.gap.max(f64::MIN_POSITIVE).ln()).collect();
    let slope = linear_fit(&lx, &ly).map(|f| f.slope).unwrap_or(f64::NAN);
    let predicted = gaps[0].predicted_exponent;
    Ok(StrongFellerReport {
        gaps,
        predicted_exponent: predicted,
        loglog_slope: slope,
        monotone,
        slope_ok: slope >= predicted - 0.15,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitReport {
    pub target: Vec<f64>,
    pub radius: f64,
    pub c_m: f64,
    pub c0: f64,
    /// `(e^{-C(m)T}|x0-y0|² + C0/C(m)) / a²`
    pub chebyshev_bound: f64,
    pub hits: u64,
    pub trials: u64,
    pub hit_probability: f64,
    pub cp_lower: f64,
    pub cp_upper: f64,
    pub pinned_exceedance: BoundCheck,
}

impl HitReport {
    pub fn passed(&self) -> bool {
        self.hits > 0 && self.pinned_exceedance.pass
    }
}

/// Chebyshev bound on `P(|Y_T - y0| > a)` for the pinned process.
pub fn chebyshev_bound(
    op: &OperatorSpec,
    m: f64,
    lambda1: f64,
    x0: &[f64],
    y0: &[f64],
    horizon_t: f64,
    radius_a: f64,
) -> Result<(PinnedConstants, f64)> {
    let c = PinnedConstants::new(op, m, y0, lambda1)?;
    if c.c_m <= 0.0 {
        return Err(MsdeError::PinTooWeak { c_m: c.c_m });
    }
    let b = c.bound(horizon_t, norm_sq(&sub(x0, y0))) / (radius_a * radius_a);
    Ok((c, b))
}

fn final_states<C: Coefficients + ?Sized>(
    coeffs: &C,
    op: &OperatorSpec,
    x0: &[f64],
    config: &SimConfig,
    stream_base: u64,
) -> Result<Vec<Vec<f64>>> {
    let n_steps = config.n_steps();
    (0..config.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut last = Vec::new();
            run_path(coeffs, op, x0, config, p, stream_base + p as u64, |k, x, _| {
                if k == n_steps {
                    last = x.to_vec();
                }
            })?;
            Ok(last)
        })
        .collect()
}

/// Irreducibility probe: hit frequency of `B(y0, a)` at time `T` (`config.horizon_t`)
/// for the original model, and the pinned-process exceedance against its Chebyshev bound.
pub fn irreducibility_check(
    model: &ModelSpec,
    x0: &[f64],
    target: &[f64],
    radius_a: f64,
    m: f64,
    config: &SimConfig,
) -> Result<HitReport> {
    model.validate()?;
    config.validate()?;
    if !(radius_a > 0.0) {
        return Err(invalid("radius_a", "must be positive"));
    }
    if target.len() != model.dim_x {
        return Err(MsdeError::Dimension { expected: model.dim_x, got: target.len() });
    }
    check_pin_target(&model.operator, target)?;
    check_x0(&model.operator, x0, model.dim_x)?;
    let (consts, bound) =
        chebyshev_bound(&model.operator, m, model.constants.lambda1, x0, target, config.horizon_t, radius_a)?;
    if bound >= 1.0 {
        return Err(MsdeError::ChebyshevBoundTooLarge { bound });
    }

    let finals = final_states(model, &model.operator, x0, config, 0)?;
    let hits = finals.iter().filter(|x| dist(x, target) <= radius_a).count() as u64;
    let trials = finals.len() as u64;
    let (cp_lower, cp_upper) = clopper_pearson(hits, trials, 0.05);

    let pinned = Pinned { base: model, strength: m, target };
    let pinned_finals = final_states(&pinned, &model.operator, x0, config, SECOND_ENSEMBLE_STREAM)?;
    let exceed = MeanSe::of_iter(pinned_finals.iter().map(|y| if dist(y, target) > radius_a { 1.0 } else { 0.0 }));

    Ok(HitReport {
        target: target.to_vec(),
        radius: radius_a,
        c_m: consts.c_m,
        c0: consts.c0,
        chebyshev_bound: bound,
        hits,
        trials,
        hit_probability: hits as f64 / trials as f64,
        cp_lower,
        cp_upper,
        pinned_exceedance: BoundCheck::upper("P(|Y_T-y0|>a)", Some(config.horizon_t), exceed, bound, 3.0),
    })
}
