//! MSDE problem specification `dX + A(X)dt ∋ b(X)dt + σ(X)dW` and sampling
//! checkers for the structural hypotheses on `b` and `σ`.
//!
//! The checkers are refuters: a report either exhibits a violating sample or
//! says that none was found among the evaluated points. They never prove a
//! hypothesis, since each one quantifies over all of R^d.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MsdeError, Result};
use crate::linalg::{dist, dot, norm, norm_sq, Matrix};
use crate::operators::OperatorSpec;
use crate::rng::seeded;

/// Default absolute tolerance of the checkers.
pub const CHECK_TOL: f64 = 1e-9;

/// Drift families. Linear and polynomial drifts are written with a leading minus sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    /// `b(x) = -Bx`
    Linear { matrix: Matrix },
    /// `b(x) = -c1 |x|^(r-1) x - Bx`
    PolyConfining { c1: f64, exponent: f64, matrix: Matrix },
    /// `b(x) = v`
    Constant { vector: Vec<f64> },
}

/// Diffusion families; `σ(x)` is a `d × n` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Diffusion {
    ConstantMatrix { matrix: Matrix },
    /// `σ_ii(x) = s0 + s1 / (1 + |x|²)` on the diagonal, zero elsewhere.
    DiagonalAffine { s0: f64, s1: f64 },
}

/// Constants of the monotonicity, growth, ellipticity and confinement hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisConstants {
    pub lambda0: f64,
    pub lambda1: f64,
    /// Bound on `‖[σσ*]^{-1}‖`; absent when the diffusion is degenerate.
    #[serde(default)]
    pub lambda2: Option<f64>,
    pub lambda3: f64,
    pub lambda4: f64,
    pub p: f64,
    pub eta: f64,
}

impl HypothesisConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda3 > 0.0) {
            return Err(invalid("lambda3", format!("must be > 0, got {}", self.lambda3)));
        }
        if !(self.lambda4 >= 0.0) {
            return Err(invalid("lambda4", format!("must be >= 0, got {}", self.lambda4)));
        }
        if !(self.p >= 2.0) {
            return Err(invalid("p", format!("must be >= 2, got {}", self.p)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(invalid("eta", format!("must lie in (0, 1], got {}", self.eta)));
        }
        if !(self.lambda1 >= 0.0) || !self.lambda0.is_finite() {
            return Err(invalid("lambda1", "lambda0 must be finite and lambda1 >= 0"));
        }
        if let Some(l2) = self.lambda2 {
            if !(l2 > 0.0) {
                return Err(invalid("lambda2", format!("must be > 0, got {l2}")));
            }
        }
        Ok(())
    }
}

/// Coefficient access used by the time steppers and the hypothesis checkers.
pub trait Coefficients: Sync {
    fn dim_x(&self) -> usize;
    fn dim_w(&self) -> usize;
    fn drift_into(&self, x: &[f64], out: &mut [f64]);
    /// `out = σ(x) dw`
    fn diffusion_apply_into(&self, x: &[f64], dw: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64]) -> Matrix;
    /// True if `σ` does not depend on the state.
    fn additive_noise(&self) -> bool {
        false
    }

    fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_x()];
        self.drift_into(x, &mut out);
        out
    }
}

impl Drift {
    fn dim(&self) -> usize {
        match self {
            Drift::Linear { matrix } | Drift::PolyConfining { matrix, .. } => matrix.rows(),
            Drift::Constant { vector } => vector.len(),
        }
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::Linear { matrix } => {
                matrix.mul_vec_into(x, out);
                out.iter_mut().for_each(|o| *o = -*o);
            }
            Drift::PolyConfining { c1, exponent, matrix } => {
                matrix.mul_vec_into(x, out);
                let r = norm(x);
                let f = if r > 0.0 { c1 * r.powf(exponent - 1.0) } else { 0.0 };
                for (o, v) in out.iter_mut().zip(x) {
                    *o = -*o - f * v;
                }
            }
            Drift::Constant { vector } => out.copy_from_slice(vector),
        }
    }
}

impl Diffusion {
    #[inline]
    fn diag_value(s0: f64, s1: f64, x: &[f64]) -> f64 {
        s0 + s1 / (1.0 + norm_sq(x))
    }

    pub fn matrix_at(&self, x: &[f64], d: usize, n: usize) -> Matrix {
        match self {
            Diffusion::ConstantMatrix { matrix } => matrix.clone(),
            Diffusion::DiagonalAffine { s0, s1 } => {
                let v = Self::diag_value(*s0, *s1, x);
                let mut m = Matrix::zeros(d, n);
                for i in 0..d.min(n) {
                    m.set(i, i, v);
                }
                m
            }
        }
    }
}

/// Full MSDE problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim_x: usize,
    pub dim_w: usize,
    pub operator: OperatorSpec,
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub constants: HypothesisConstants,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim_x == 0 || self.dim_w == 0 {
            return Err(invalid("dim", "dim_x and dim_w must be positive"));
        }
        self.operator.validate(self.dim_x)?;
        match &self.drift {
            Drift::Linear { matrix } | Drift::PolyConfining { matrix, .. } => {
                if !matrix.is_square() || matrix.rows() != self.dim_x {
                    return Err(MsdeError::Dimension { expected: self.dim_x, got: matrix.rows() });
                }
            }
            Drift::Constant { .. } => {}
        }
        if self.drift.dim() != self.dim_x {
            return Err(MsdeError::Dimension { expected: self.dim_x, got: self.drift.dim() });
        }
        if let Drift::PolyConfining { c1, exponent, .. } = &self.drift {
            if !(*c1 >= 0.0) || !(*exponent >= 1.0) {
                return Err(invalid("drift", "poly_confining needs c1 >= 0 and exponent >= 1"));
            }
        }
        if let Diffusion::ConstantMatrix { matrix } = &self.diffusion {
            if matrix.rows() != self.dim_x || matrix.cols() != self.dim_w {
                return Err(invalid(
                    "diffusion",
                    format!(
                        "matrix is {}x{}, model needs {}x{}",
                        matrix.rows(),
                        matrix.cols(),
                        self.dim_x,
                        self.dim_w
                    ),
                ));
            }
        }
        self.constants.validate()
    }

    /// Stable short hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        crate::fingerprint(self)
    }
}

impl Coefficients for ModelSpec {
    fn dim_x(&self) -> usize {
        self.dim_x
    }

    fn dim_w(&self) -> usize {
        self.dim_w
    }

    #[inline]
    fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        self.drift.eval_into(x, out);
    }

    #[inline]
    fn diffusion_apply_into(&self, x: &[f64], dw: &[f64], out: &mut [f64]) {
        match &self.diffusion {
            Diffusion::ConstantMatrix { matrix } => matrix.mul_vec_into(dw, out),
            Diffusion::DiagonalAffine { s0, s1 } => {
                let v = Diffusion::diag_value(*s0, *s1, x);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = if i < dw.len() { v * dw[i] } else { 0.0 };
                }
            }
        }
    }

    fn diffusion(&self, x: &[f64]) -> Matrix {
        self.diffusion.matrix_at(x, self.dim_x, self.dim_w)
    }

    fn additive_noise(&self) -> bool {
        matches!(self.diffusion, Diffusion::ConstantMatrix { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H1,
    H2,
    H3,
    H4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckVerdict {
    NoViolationFound,
    Refuted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub hypothesis: Hypothesis,
    pub evaluations: usize,
    /// Largest value of `lhs - rhs` seen (normalized by `|x-y|²` for H1).
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub tolerance: f64,
    pub verdict: CheckVerdict,
    /// Sharpest constant consistent with the sample: minimal `λ0`, minimal `λ1`,
    /// minimum eigenvalue of `σσ*`, or maximal `λ3`, respectively.
    pub sample_constant: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.verdict == CheckVerdict::NoViolationFound
    }

    pub fn summary(&self) -> String {
        match self.verdict {
            CheckVerdict::NoViolationFound => {
                format!("{:?}: no violation found in {} samples", self.hypothesis, self.evaluations)
            }
            CheckVerdict::Refuted => format!(
                "{:?}: refuted at {:?} (margin {:.3e})",
                self.hypothesis, self.worst_point, self.worst_margin
            ),
        }
    }
}

fn sample_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    let dir = random_unit(rng, d);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    dir.into_iter().map(|v| v * r).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

struct Tracker {
    worst: f64,
    point: Vec<f64>,
    count: usize,
}

impl Tracker {
    fn new() -> Self {
        Tracker { worst: f64::NEG_INFINITY, point: Vec::new(), count: 0 }
    }

    fn observe(&mut self, margin: f64, x: &[f64]) {
        self.count += 1;
        if margin > self.worst || margin.is_nan() {
            self.worst = margin;
            self.point = x.to_vec();
        }
    }

    fn report(self, hypothesis: Hypothesis, tolerance: f64, sample_constant: f64) -> CheckReport {
        let verdict = if self.worst <= tolerance {
            CheckVerdict::NoViolationFound
        } else {
            CheckVerdict::Refuted
        };
        CheckReport {
            hypothesis,
            evaluations: self.count,
            worst_margin: self.worst,
            worst_point: self.point,
            tolerance,
            verdict,
            sample_constant,
        }
    }
}

fn check_inputs(n_samples: usize, region_radius: f64) -> Result<()> {
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be >= 1"));
    }
    if !(region_radius > 0.0) || !region_radius.is_finite() {
        return Err(invalid("region_radius", "must be positive and finite"));
    }
    Ok(())
}

/// Separation ladder probed around every sampled center.
const SEPARATIONS: [f64; 8] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];

/// `2<x-y, b(x)-b(y)> + ‖σ(x)-σ(y)‖²_HS ≤ λ0 |x-y|² (1 ∨ log|x-y|^{-1})`.
///
/// The margin is reported per unit `|x-y|²` so the check keeps its resolution
/// at small separations. `sample_constant` is the minimal `λ0 ≥ 0` over the sample.
pub fn check_h1(
    model: &(impl Coefficients + ?Sized),
    lambda0: f64,
    n_samples: usize,
    region_radius: f64,
    rng_seed: u64,
) -> Result<CheckReport> {
    check_inputs(n_samples, region_radius)?;
    let d = model.dim_x();
    let mut rng = seeded(rng_seed);
    let mut tracker = Tracker::new();
    let mut needed: f64 = 0.0;
    let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);

    let mut eval = |x: &[f64], y: &[f64], tracker: &mut Tracker| {
        let sep = dist(x, y);
        if sep == 0.0 {
            return;
        }
        model.drift_into(x, &mut bx);
        model.drift_into(y, &mut by);
        let drift_term: f64 =
            2.0 * x.iter().zip(y).zip(bx.iter().zip(&by)).map(|((a, b), (c, e))| (a - b) * (c - e)).sum::<f64>();
        let diff_term = model.diffusion(x).sub(&model.diffusion(y)).hs_norm().powi(2);
        let weight = 1.0_f64.max((1.0 / sep).ln());
        let lhs = (drift_term + diff_term) / (sep * sep);
        needed = needed.max(lhs / weight);
        tracker.observe(lhs - lambda0 * weight, x);
    };

    let origin = vec![0.0; d];
    let u = random_unit(&mut rng, d);
    for s in SEPARATIONS {
        let x: Vec<f64> = u.iter().map(|v| v * s).collect();
        eval(&x, &origin, &mut tracker);
    }
    for _ in 0..n_samples {
        let x = sample_ball(&mut rng, d, region_radius);
        let y = sample_ball(&mut rng, d, region_radius);
        eval(&x, &y, &mut tracker);
        let u = random_unit(&mut rng, d);
        for s in SEPARATIONS {
            let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + s * b).collect();
            eval(&x, &y, &mut tracker);
        }
    }
    Ok(tracker.report(Hypothesis::H1, CHECK_TOL, needed))
}

/// `‖σ(x)‖_HS ≤ λ1 (1 + |x|)`; `sample_constant` is the minimal feasible `λ1`.
pub fn check_h2(
    model: &(impl Coefficients + ?Sized),
    lambda1: f64,
    n_samples: usize,
    region_radius: f64,
    rng_seed: u64,
) -> Result<CheckReport> {
    check_inputs(n_samples, region_radius)?;
    let d = model.dim_x();
    let mut rng = seeded(rng_seed);
    let mut tracker = Tracker::new();
    let mut needed: f64 = 0.0;
    let mut eval = |x: &[f64], tracker: &mut Tracker| {
        let hs = model.diffusion(x).hs_norm();
        let growth = 1.0 + norm(x);
        needed = needed.max(hs / growth);
        tracker.observe(hs - lambda1 * growth, x);
    };
    eval(&vec![0.0; d], &mut tracker);
    for _ in 0..n_samples {
        let x = sample_ball(&mut rng, d, region_radius);
        eval(&x, &mut tracker);
    }
    Ok(tracker.report(Hypothesis::H2, CHECK_TOL, needed))
}

/// `σσ*(x) > 0`: passes iff the smallest eigenvalue seen exceeds `1e-12`.
/// `sample_constant` is that smallest eigenvalue.
pub fn check_h3(
    model: &(impl Coefficients + ?Sized),
    n_samples: usize,
    region_radius: f64,
    rng_seed: u64,
) -> Result<CheckReport> {
    const MIN_EIG: f64 = 1e-12;
    check_inputs(n_samples, region_radius)?;
    let d = model.dim_x();
    let mut rng = seeded(rng_seed);
    let mut tracker = Tracker::new();
    let mut min_eig = f64::INFINITY;
    let mut eval = |x: &[f64], tracker: &mut Tracker| {
        let e = model.diffusion(x).gram().min_symmetric_eigenvalue();
        min_eig = min_eig.min(e);
        tracker.observe(-e, x);
    };
    eval(&vec![0.0; d], &mut tracker);
    for _ in 0..n_samples {
        let x = sample_ball(&mut rng, d, region_radius);
        eval(&x, &mut tracker);
    }
    Ok(tracker.report(Hypothesis::H3, -MIN_EIG, min_eig))
}

/// `2<x, b(x)> + ‖σ(x)‖²_HS ≤ -λ3 |x|^p + λ4`; `sample_constant` is the largest
/// `λ3` compatible with the sample at the given `p` and `λ4`.
pub fn check_h4(
    model: &(impl Coefficients + ?Sized),
    constants: &HypothesisConstants,
    n_samples: usize,
    region_radius: f64,
    rng_seed: u64,
) -> Result<CheckReport> {
    check_inputs(n_samples, region_radius)?;
    let d = model.dim_x();
    let (l3, l4, p) = (constants.lambda3, constants.lambda4, constants.p);
    let mut rng = seeded(rng_seed);
    let mut tracker = Tracker::new();
    let mut best_l3 = f64::INFINITY;
    let mut b = vec![0.0; d];
    let mut eval = |x: &[f64], tracker: &mut Tracker| {
        model.drift_into(x, &mut b);
        let lhs = 2.0 * dot(x, &b) + model.diffusion(x).hs_norm().powi(2);
        let r = norm(x);
        let rhs = -l3 * r.powf(p) + l4;
        if r > 0.0 {
            best_l3 = best_l3.min((l4 - lhs) / r.powf(p));
        }
        tracker.observe((lhs - rhs) / rhs.abs().max(1.0), x);
    };
    eval(&vec![0.0; d], &mut tracker);
    let mut boundary = random_unit(&mut rng, d);
    boundary.iter_mut().for_each(|v| *v *= region_radius);
    eval(&boundary, &mut tracker);
    for _ in 0..n_samples {
        let x = sample_ball(&mut rng, d, region_radius);
        eval(&x, &mut tracker);
    }
    Ok(tracker.report(Hypothesis::H4, CHECK_TOL, best_l3))
}

/// Modulus `ρ_η(r) = r (1 ∨ log(1/r))` on `(0, η]`, `η ≤ 1`.
///
/// Nondecreasing everywhere; concave only for `η <= 1/e` (the two branches meet with a convex kink at `1/e`).
pub fn modulus_rho(r: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid("eta", format!("must lie in (0, 1], got {eta}")));
    }
    if !(r > 0.0 && r <= eta) {
        return Err(invalid("r", format!("must lie in (0, {eta}], got {r}")));
    }
    Ok(r * 1.0_f64.max((1.0 / r).ln()))
}

/// Runs the checkers for `which` at the model's declared constants.
///
/// For H3 a declared `λ2` is also checked: the smallest eigenvalue of `σσ*`
/// seen must be at least `1/λ2`.
pub fn check_hypotheses(
    model: &ModelSpec,
    which: &[Hypothesis],
    n_samples: usize,
    region_radius: f64,
    rng_seed: u64,
) -> Result<Vec<CheckReport>> {
    let c = &model.constants;
    which
        .iter()
        .map(|h| match h {
            Hypothesis::H1 => check_h1(model, c.lambda0, n_samples, region_radius, rng_seed),
            Hypothesis::H2 => check_h2(model, c.lambda1, n_samples, region_radius, rng_seed),
            Hypothesis::H3 => {
                let mut r = check_h3(model, n_samples, region_radius, rng_seed)?;
                if let Some(l2) = c.lambda2 {
                    if r.sample_constant * l2 < 1.0 - CHECK_TOL {
                        r.verdict = CheckVerdict::Refuted;
                    }
                }
                Ok(r)
            }
            Hypothesis::H4 => check_h4(model, c, n_samples, region_radius, rng_seed),
        })
        .collect()
}
