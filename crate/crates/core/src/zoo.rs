//! Built-in models with the hypothesis constants each one satisfies.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::model::{Diffusion, Drift, Hypothesis, HypothesisConstants, ModelSpec};
use crate::operators::{ConvexSet, OperatorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooEntry {
    pub name: String,
    pub description: String,
    pub model: ModelSpec,
    /// Hypotheses the declared constants are claimed to satisfy.
    pub claims: Vec<Hypothesis>,
    pub x0: Vec<f64>,
    /// Radius of the ball the hypothesis checkers sample by default.
    pub check_radius: f64,
}

fn constants(lambda0: f64, lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64, p: f64) -> HypothesisConstants {
    HypothesisConstants { lambda0, lambda1, lambda2: Some(lambda2), lambda3, lambda4, p, eta: 1.0 }
}

const ALL: [Hypothesis; 4] = [Hypothesis::H1, Hypothesis::H2, Hypothesis::H3, Hypothesis::H4];

/// `dX = -X dt + √2 dW` on R.
pub fn ornstein_uhlenbeck() -> ModelSpec {
    ModelSpec {
        dim_x: 1,
        dim_w: 1,
        operator: OperatorSpec::Zero,
        drift: Drift::Linear { matrix: Matrix::identity(1) },
        diffusion: Diffusion::ConstantMatrix { matrix: Matrix::scaled_identity(1, 2f64.sqrt()) },
        constants: constants(0.0, 2f64.sqrt(), 0.5, 2.0, 2.0, 2.0),
    }
}

/// Brownian motion with drift `-1` reflected at zero; stationary law `Exp(2)`.
pub fn reflected_bm() -> ModelSpec {
    ModelSpec {
        dim_x: 1,
        dim_w: 1,
        operator: OperatorSpec::normal_cone(ConvexSet::HalfSpace { normal: vec![-1.0], offset: 0.0 }),
        drift: Drift::Constant { vector: vec![-1.0] },
        diffusion: Diffusion::ConstantMatrix { matrix: Matrix::identity(1) },
        // the confinement constants are placeholders: a constant drift cannot satisfy it
        constants: constants(0.0, 1.0, 1.0, 1.0, 1.0, 2.0),
    }
}

/// OU in 2-d reflected at the unit sphere, `σ = I/√2`.
pub fn reflected_ou_ball() -> ModelSpec {
    ModelSpec {
        dim_x: 2,
        dim_w: 2,
        operator: OperatorSpec::normal_cone(ConvexSet::Ball { center: vec![0.0, 0.0], radius: 1.0 }),
        drift: Drift::Linear { matrix: Matrix::identity(2) },
        diffusion: Diffusion::ConstantMatrix { matrix: Matrix::scaled_identity(2, 0.5f64.sqrt()) },
        constants: constants(0.0, 1.0, 2.0, 2.0, 1.0, 2.0),
    }
}

/// `dX = -X³ dt + dW` on R.
pub fn cubic() -> ModelSpec {
    ModelSpec {
        dim_x: 1,
        dim_w: 1,
        operator: OperatorSpec::Zero,
        drift: Drift::PolyConfining { c1: 1.0, exponent: 3.0, matrix: Matrix::zeros(1, 1) },
        diffusion: Diffusion::ConstantMatrix { matrix: Matrix::identity(1) },
        constants: constants(0.0, 1.0, 1.0, 2.0, 1.0, 4.0),
    }
}

/// Damped rotation in the box `[-2, 2]²`, `σ = I/√2`.
pub fn box_linear() -> ModelSpec {
    ModelSpec {
        dim_x: 2,
        dim_w: 2,
        operator: OperatorSpec::normal_cone(ConvexSet::Box { lower: vec![-2.0, -2.0], upper: vec![2.0, 2.0] }),
        drift: Drift::Linear {
            matrix: Matrix::from_rows(&[vec![1.0, 0.5], vec![-0.5, 1.0]]).expect("2x2 rows"),
        },
        diffusion: Diffusion::ConstantMatrix { matrix: Matrix::scaled_identity(2, 0.5f64.sqrt()) },
        constants: constants(0.0, 1.0, 2.0, 2.0, 1.0, 2.0),
    }
}

/// `A = ∂(|x|³/3)` with linear drift and state-dependent diagonal noise `1 + 0.5/(1+|x|²)`.
pub fn power_svi() -> ModelSpec {
    ModelSpec {
        dim_x: 2,
        dim_w: 2,
        operator: OperatorSpec::SubdiffPower { coefficient: 1.0, exponent: 3.0 },
        drift: Drift::Linear { matrix: Matrix::identity(2) },
        diffusion: Diffusion::DiagonalAffine { s0: 1.0, s1: 0.5 },
        // ‖σ(0)‖_HS = 1.5√2; σσ* ≥ I; 2<x,-x> + ‖σ‖² ≤ -2|x|² + 4.5
        constants: constants(0.0, 1.5 * 2f64.sqrt(), 1.0, 2.0, 4.5, 2.0),
    }
}

pub fn catalogue() -> Vec<ZooEntry> {
    let entry = |name: &str, description: &str, model: ModelSpec, claims: &[Hypothesis], x0: Vec<f64>, r: f64| ZooEntry {
        name: name.into(),
        description: description.into(),
        model,
        claims: claims.to_vec(),
        x0,
        check_radius: r,
    };
    vec![
        entry("ou", "Ornstein-Uhlenbeck, b = -x, sigma = sqrt 2", ornstein_uhlenbeck(), &ALL, vec![0.0], 5.0),
        entry(
            "reflected_bm",
            "Brownian motion with drift -1 reflected on [0, inf)",
            reflected_bm(),
            &[Hypothesis::H1, Hypothesis::H2, Hypothesis::H3],
            vec![0.0],
            5.0,
        ),
        entry(
            "reflected_ou_ball",
            "2-d OU reflected in the unit ball, sigma = I/sqrt 2",
            reflected_ou_ball(),
            &ALL,
            vec![0.0, 0.0],
            3.0,
        ),
        entry("cubic", "cubic confinement b = -x^3, sigma = 1", cubic(), &ALL, vec![0.0], 3.0),
        entry(
            "box_linear",
            "damped rotation in the box [-2, 2]^2, sigma = I/sqrt 2",
            box_linear(),
            &ALL,
            vec![1.0, 0.0],
            4.0,
        ),
        entry(
            "power_svi",
            "variational inequality A = grad |x|^3/3, multiplicative diagonal noise",
            power_svi(),
            &ALL,
            vec![0.5, -0.5],
            4.0,
        ),
    ]
}

pub fn by_name(name: &str) -> Option<ZooEntry> {
    catalogue().into_iter().find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_hypotheses;

    #[test]
    fn entries_validate_and_pass_claims() {
        let cat = catalogue();
        assert!(cat.len() >= 6);
        for e in &cat {
            e.model.validate().unwrap();
            let reports = check_hypotheses(&e.model, &e.claims, 2000, e.check_radius, 3).unwrap();
            for r in reports {
                assert!(r.passed(), "{}: {}", e.name, r.summary());
            }
            assert!(e.model.operator.in_domain(&e.x0, 0.0));
        }
    }

    #[test]
    fn reflected_bm_fails_confinement() {
        let m = reflected_bm();
        let r = check_hypotheses(&m, &[Hypothesis::H4], 500, 5.0, 1).unwrap();
        assert!(!r[0].passed());
    }

    #[test]
    fn lookup() {
        assert!(by_name("cubic").is_some());
        assert!(by_name("nope").is_none());
    }
}
