//! Simulation and bound verification for multivalued stochastic differential
//! equations
//!
//! ```text
//! dX_t + A(X_t) dt ∋ b(X_t) dt + σ(X_t) dW_t
//! ```
//!
//! where `A` is a maximal monotone operator on R^d. The crate provides
//!
//! * a catalogue of operators with exact resolvents and Yosida approximations ([`operators`]),
//! * model specifications and sampling checkers for the structural hypotheses ([`model`]),
//! * path ensembles of the resolvent-split and Yosida–Euler schemes ([`simulate`]),
//! * the drift-transform coupling with its Girsanov density ([`coupling`]),
//! * invariant-measure, total-variation and moment estimates ([`ergodicity`]).
//!
//! All Monte Carlo output is a deterministic function of a single master seed.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod ergodicity;
pub mod error;
pub mod export;
pub mod linalg;
pub mod model;
pub mod operators;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod zoo;

pub use error::{MsdeError, Result};
pub use linalg::Matrix;
pub use model::{Coefficients, Diffusion, Drift, HypothesisConstants, ModelSpec};
pub use operators::{ConvexSet, OperatorSpec};
pub use simulate::{PathEnsemble, Scheme, SimConfig};

use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
pub fn fingerprint<T: serde::Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("fingerprinted values are serializable");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
