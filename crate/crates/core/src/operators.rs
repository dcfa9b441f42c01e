//! Maximal monotone operators on R^d with exact resolvents.
//!
//! Every family in the catalogue has a resolvent `J_λ = (I + λA)^{-1}` that is
//! either closed form or a one-dimensional monotone root-find, so the
//! constraint step of a simulation never carries an iteration error beyond
//! `1e-12`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, MsdeError, Result};
use crate::linalg::{dist, dot, norm, Matrix};

const ROOT_TOL: f64 = 1e-12;
const DOMAIN_TOL: f64 = 1e-9;
const INTERIOR_PROBE: f64 = 1e-6;

/// Closed convex set with an exact Euclidean projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexSet {
    /// Per-coordinate bounds; entries may be infinite.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// `{x : <normal, x> <= offset}`
    HalfSpace { normal: Vec<f64>, offset: f64 },
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::HalfSpace { normal, .. } => normal.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ConvexSet::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(MsdeError::InvalidOperator("box bounds have mismatched length".into()));
                }
                for (l, u) in lower.iter().zip(upper) {
                    if l.is_nan() || u.is_nan() || l > u {
                        return Err(MsdeError::InvalidOperator(format!("empty box: [{l}, {u}]")));
                    }
                    if l >= u {
                        return Err(MsdeError::InvalidOperator(format!(
                            "box [{l}, {u}] has empty interior"
                        )));
                    }
                }
            }
            ConvexSet::Ball { center, radius } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return Err(MsdeError::InvalidOperator("ball center must be finite".into()));
                }
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(MsdeError::InvalidOperator(format!(
                        "ball radius must be positive and finite, got {radius}"
                    )));
                }
            }
            ConvexSet::HalfSpace { normal, offset } => {
                if normal.is_empty() || !(norm(normal) > 0.0) || !offset.is_finite() {
                    return Err(MsdeError::InvalidOperator(
                        "half-space needs a nonzero normal and finite offset".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Euclidean projection written into `out`.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ConvexSet::Box { lower, upper } => {
                for i in 0..x.len() {
                    out[i] = x[i].clamp(lower[i], upper[i]);
                }
            }
            ConvexSet::Ball { center, radius } => {
                let r = dist(x, center);
                if r <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let s = radius / r;
                    for i in 0..x.len() {
                        out[i] = center[i] + s * (x[i] - center[i]);
                    }
                }
            }
            ConvexSet::HalfSpace { normal, offset } => {
                let excess = dot(normal, x) - offset;
                out.copy_from_slice(x);
                if excess > 0.0 {
                    let s = excess / dot(normal, normal);
                    for i in 0..x.len() {
                        out[i] -= s * normal[i];
                    }
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            ConvexSet::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
            }
            ConvexSet::Ball { center, radius } => dist(x, center) <= radius + tol,
            ConvexSet::HalfSpace { normal, offset } => dot(normal, x) <= offset + tol * norm(normal),
        }
    }
}

/// Declarative maximal monotone operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Zero,
    /// `A(x) = Mx` with `M + Mᵀ` positive semidefinite.
    LinearPsd { matrix: Matrix },
    /// Normal cone of a closed convex set; the resolvent is the projection.
    NormalCone { set: ConvexSet },
    /// Subdifferential of `φ(x) = c|x|^q / q`.
    SubdiffPower { coefficient: f64, exponent: f64 },
}

impl OperatorSpec {
    pub fn normal_cone(set: ConvexSet) -> Self {
        OperatorSpec::NormalCone { set }
    }

    /// Checks well-formedness and, when the operator fixes a dimension, that it matches `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            OperatorSpec::Zero => Ok(()),
            OperatorSpec::LinearPsd { matrix } => {
                if !matrix.is_square() || matrix.rows() != dim {
                    return Err(MsdeError::Dimension { expected: dim, got: matrix.rows() });
                }
                let min_eig = matrix.min_symmetric_eigenvalue();
                if min_eig < -1e-12 {
                    return Err(MsdeError::InvalidOperator(format!(
                        "symmetric part of M is not positive semidefinite (min eigenvalue {min_eig})"
                    )));
                }
                Ok(())
            }
            OperatorSpec::NormalCone { set } => {
                set.validate()?;
                if set.dim() != dim {
                    return Err(MsdeError::Dimension { expected: dim, got: set.dim() });
                }
                Ok(())
            }
            OperatorSpec::SubdiffPower { coefficient, exponent } => {
                if !(*coefficient > 0.0) || !coefficient.is_finite() {
                    return Err(MsdeError::InvalidOperator(format!(
                        "power coefficient must be positive, got {coefficient}"
                    )));
                }
                if !(*exponent >= 1.0) || !exponent.is_finite() {
                    return Err(MsdeError::InvalidOperator(format!(
                        "power exponent must be >= 1, got {exponent}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Whether `x` lies in the closure of the domain, up to `tol`.
    pub fn in_domain(&self, x: &[f64], tol: f64) -> bool {
        match self {
            OperatorSpec::NormalCone { set } => set.contains(x, tol),
            _ => true,
        }
    }

    /// Interior test used for pinning targets: `x` must be a fixed point of the
    /// domain projection and small axis-aligned probes around it must stay in the domain.
    pub fn is_interior(&self, x: &[f64]) -> bool {
        let OperatorSpec::NormalCone { set } = self else {
            return true;
        };
        let proj = project_domain(self, x);
        if dist(&proj, x) > DOMAIN_TOL {
            return false;
        }
        let d = x.len();
        let mut probe = x.to_vec();
        for k in 0..6 {
            let axis = (k / 2) % d;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            probe.copy_from_slice(x);
            probe[axis] += sign * INTERIOR_PROBE * x[axis].abs().max(1.0);
            if !set.contains(&probe, 0.0) {
                return false;
            }
        }
        true
    }

    /// Resolvent prepared for a fixed `λ`, as used inside time-stepping loops.
    pub fn prepare(&self, lambda: f64) -> Result<PreparedResolvent> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid("lambda", format!("must be positive, got {lambda}")));
        }
        let kind = match self {
            OperatorSpec::Zero => Prepared::Identity,
            OperatorSpec::LinearPsd { matrix } => {
                let n = matrix.rows();
                let inv = Matrix::identity(n).add(&matrix.scale(lambda)).inverse()?;
                Prepared::Linear(inv)
            }
            OperatorSpec::NormalCone { set } => Prepared::Projection(set.clone()),
            OperatorSpec::SubdiffPower { coefficient, exponent } => {
                Prepared::Power { scale: lambda * coefficient, exponent: *exponent }
            }
        };
        Ok(PreparedResolvent { lambda, kind })
    }
}

#[derive(Debug, Clone)]
enum Prepared {
    Identity,
    Linear(Matrix),
    Projection(ConvexSet),
    Power { scale: f64, exponent: f64 },
}

/// `J_λ` for one fixed `λ`.
#[derive(Debug, Clone)]
pub struct PreparedResolvent {
    lambda: f64,
    kind: Prepared,
}

impl PreparedResolvent {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, Prepared::Identity)
    }

    /// `out = J_λ(x)`; `x` and `out` must not alias.
    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            Prepared::Identity => out.copy_from_slice(x),
            Prepared::Linear(inv) => inv.mul_vec_into(x, out),
            Prepared::Projection(set) => set.project_into(x, out),
            Prepared::Power { scale, exponent } => {
                let r = norm(x);
                let s = power_radius(r, *scale, *exponent);
                let f = if r > 0.0 { s / r } else { 0.0 };
                for (o, v) in out.iter_mut().zip(x) {
                    *o = f * v;
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }
}

/// Unique `s >= 0` with `s + scale * s^(q-1) = r`.
fn power_radius(r: f64, scale: f64, q: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    if q == 1.0 {
        // soft threshold: the subdifferential at 0 is the ball of radius c
        return (r - scale).max(0.0);
    }
    if q == 2.0 {
        return r / (1.0 + scale);
    }
    let g = |s: f64| s + scale * s.powf(q - 1.0) - r;
    let (mut lo, mut hi) = (0.0_f64, r);
    let mut s = r / (1.0 + scale * r.powf(q - 2.0));
    s = s.clamp(lo, hi);
    for _ in 0..200 {
        let gs = g(s);
        if gs.abs() <= ROOT_TOL * r.max(1.0) {
            return s;
        }
        if gs > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let dg = 1.0 + scale * (q - 1.0) * s.powf(q - 2.0);
        let newton = s - gs / dg;
        s = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * r {
            break;
        }
    }
    s
}

fn check_point(x: &[f64]) -> Result<()> {
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x", "point must be nonempty and finite"));
    }
    Ok(())
}

/// `J_λ(x) = (I + λA)^{-1}(x)`.
pub fn resolvent(op: &OperatorSpec, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_point(x)?;
    op.validate(x.len())?;
    Ok(op.prepare(lambda)?.apply(x))
}

/// Yosida approximation `A_λ(x) = (x - J_λ(x)) / λ`.
///
/// For single-valued `A` this equals `A(J_λ(x))`, which is evaluated directly
/// to avoid cancellation at small `λ`.
pub fn yosida(op: &OperatorSpec, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
    let j = resolvent(op, lambda, x)?;
    match op {
        OperatorSpec::LinearPsd { matrix } => Ok(matrix.mul_vec(&j)),
        OperatorSpec::SubdiffPower { coefficient, exponent } if norm(&j) > 0.0 => {
            let f = coefficient * norm(&j).powf(exponent - 2.0);
            Ok(j.iter().map(|v| f * v).collect())
        }
        _ => Ok(x.iter().zip(&j).map(|(a, b)| (a - b) / lambda).collect()),
    }
}

/// Least-norm element of `A(x)`.
pub fn minimal_section(op: &OperatorSpec, x: &[f64]) -> Result<Vec<f64>> {
    check_point(x)?;
    op.validate(x.len())?;
    match op {
        OperatorSpec::Zero => Ok(vec![0.0; x.len()]),
        OperatorSpec::LinearPsd { matrix } => Ok(matrix.mul_vec(x)),
        OperatorSpec::NormalCone { set } => {
            if set.contains(x, DOMAIN_TOL) {
                Ok(vec![0.0; x.len()])
            } else {
                Err(MsdeError::OutsideDomain { point: x.to_vec() })
            }
        }
        OperatorSpec::SubdiffPower { coefficient, exponent } => {
            let r = norm(x);
            if r == 0.0 {
                return Ok(vec![0.0; x.len()]);
            }
            let f = coefficient * r.powf(exponent - 2.0);
            Ok(x.iter().map(|v| f * v).collect())
        }
    }
}

/// Euclidean projection onto `cl D(A)`.
pub fn project_domain(op: &OperatorSpec, x: &[f64]) -> Vec<f64> {
    match op {
        OperatorSpec::NormalCone { set } => {
            let mut out = vec![0.0; x.len()];
            set.project_into(x, &mut out);
            out
        }
        _ => x.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(d: usize) -> OperatorSpec {
        OperatorSpec::normal_cone(ConvexSet::Box { lower: vec![0.0; d], upper: vec![1.0; d] })
    }

    fn ball(d: usize) -> OperatorSpec {
        OperatorSpec::normal_cone(ConvexSet::Ball { center: vec![0.0; d], radius: 1.0 })
    }

    fn identity_op() -> OperatorSpec {
        OperatorSpec::SubdiffPower { coefficient: 1.0, exponent: 2.0 }
    }

    #[test]
    fn resolvent_examples() {
        assert_eq!(resolvent(&OperatorSpec::Zero, 1.0, &[3.0, -2.0]).unwrap(), vec![3.0, -2.0]);
        assert_eq!(resolvent(&unit_box(2), 0.5, &[1.7, -0.3]).unwrap(), vec![1.0, 0.0]);
        let z = resolvent(&identity_op(), 1.0, &[3.0]).unwrap();
        assert!((z[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn yosida_examples() {
        assert_eq!(yosida(&OperatorSpec::Zero, 0.1, &[0.3, 7.0]).unwrap(), vec![0.0, 0.0]);
        let interval =
            OperatorSpec::normal_cone(ConvexSet::Box { lower: vec![-1.0], upper: vec![1.0] });
        assert!((yosida(&interval, 0.5, &[2.0]).unwrap()[0] - 2.0).abs() < 1e-15);
        assert!((yosida(&identity_op(), 1.0, &[3.0]).unwrap()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn minimal_section_examples() {
        assert_eq!(minimal_section(&ball(2), &[0.3, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(minimal_section(&identity_op(), &[2.0, 1.0]).unwrap(), vec![2.0, 1.0]);
        let interval =
            OperatorSpec::normal_cone(ConvexSet::Box { lower: vec![-1.0], upper: vec![1.0] });
        assert_eq!(minimal_section(&interval, &[1.0]).unwrap(), vec![0.0]);
        assert!(matches!(
            minimal_section(&interval, &[1.5]),
            Err(MsdeError::OutsideDomain { .. })
        ));
        // q < 2 at the origin: minimal-norm subgradient
        let abs = OperatorSpec::SubdiffPower { coefficient: 2.0, exponent: 1.0 };
        assert_eq!(minimal_section(&abs, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn project_domain_examples() {
        assert_eq!(project_domain(&OperatorSpec::Zero, &[4.0, -1.0]), vec![4.0, -1.0]);
        let half_line = OperatorSpec::normal_cone(ConvexSet::Box {
            lower: vec![0.0],
            upper: vec![f64::INFINITY],
        });
        assert_eq!(project_domain(&half_line, &[-2.0]), vec![0.0]);
        let p = project_domain(&ball(2), &[3.0, 4.0]);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn construction_errors() {
        let not_psd = OperatorSpec::LinearPsd {
            matrix: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -0.5]]).unwrap(),
        };
        assert!(resolvent(&not_psd, 1.0, &[1.0, 1.0]).is_err());
        let empty = OperatorSpec::normal_cone(ConvexSet::Box { lower: vec![1.0], upper: vec![0.0] });
        assert!(resolvent(&empty, 1.0, &[0.5]).is_err());
        let bad_q = OperatorSpec::SubdiffPower { coefficient: 1.0, exponent: 0.5 };
        assert!(resolvent(&bad_q, 1.0, &[0.5]).is_err());
        assert!(resolvent(&OperatorSpec::Zero, 0.0, &[0.5]).is_err());
        let neg_ball =
            OperatorSpec::normal_cone(ConvexSet::Ball { center: vec![0.0], radius: -1.0 });
        assert!(resolvent(&neg_ball, 1.0, &[0.5]).is_err());
    }

    #[test]
    fn power_resolvent_solves_inclusion() {
        for &q in &[1.0, 1.3, 1.5, 2.0, 3.0, 4.0, 7.5] {
            let op = OperatorSpec::SubdiffPower { coefficient: 0.7, exponent: q };
            for &lambda in &[1e-3, 0.1, 1.0, 10.0] {
                let x = [0.8, -2.1, 0.05];
                let z = resolvent(&op, lambda, &x).unwrap();
                let a = minimal_section(&op, &z).unwrap();
                let r = norm(&z);
                if q == 1.0 && r == 0.0 {
                    // x must lie in λ·∂φ(0) = ball of radius λc
                    assert!(norm(&x) <= lambda * 0.7 + 1e-12);
                    continue;
                }
                for i in 0..3 {
                    assert!((z[i] + lambda * a[i] - x[i]).abs() < 1e-10, "q={q} λ={lambda}");
                }
            }
        }
    }

    #[test]
    fn halfspace_projection_lands_on_boundary() {
        let op = OperatorSpec::normal_cone(ConvexSet::HalfSpace { normal: vec![1.0, 1.0], offset: 1.0 });
        let p = project_domain(&op, &[2.0, 2.0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn interior_detection() {
        let b = unit_box(2);
        assert!(b.is_interior(&[0.5, 0.5]));
        assert!(!b.is_interior(&[0.0, 0.5]));
        assert!(!b.is_interior(&[2.0, 0.5]));
        assert!(OperatorSpec::Zero.is_interior(&[100.0]));
    }

    #[test]
    fn linear_resolvent_matches_solve() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![-2.0, 0.5]]).unwrap();
        let op = OperatorSpec::LinearPsd { matrix: m.clone() };
        let x = [1.0, -3.0];
        let z = resolvent(&op, 0.3, &x).unwrap();
        let mz = m.mul_vec(&z);
        for i in 0..2 {
            assert!((z[i] + 0.3 * mz[i] - x[i]).abs() < 1e-13);
        }
    }
}
