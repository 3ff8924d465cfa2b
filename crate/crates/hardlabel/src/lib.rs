//! Extraction of all parameters of a fully connected ReLU network from a
//! hard-label oracle.
//!
//! The oracle answers every query with nothing but the argmax class index.
//! The attack walks the decision boundary, locates *dual points* (inputs that
//! are simultaneously on the decision boundary and on some neuron's critical
//! hyperplane), intersects the adjacent boundary patches to recover each
//! neuron's weight row up to scale, and resolves the remaining sign by
//! majority voting over distance-to-toggle experiments.
//!
//! Modules map onto the stages of the attack:
//!
//! - [`model`]: ReLU network representation, forward evaluation, local
//!   affine maps (shared by the oracle, the verifier, and the recovered
//!   prefix computations).
//! - [`oracle`]: the query-metered hard-label interface.
//! - [`geometry`]: black-box boundary primitives (bisection, normal
//!   estimation, projection, walking to a bend).
//! - [`dual`]: dual-point search and dual spaces.
//! - [`signature`]: weight-row recovery via rank tests, clique clustering
//!   and dual-space unification.
//! - [`sign`]: distance-to-toggle sign voting with Hoeffding confidence.
//! - [`pipeline`]: layer-by-layer orchestration, reports, checkpoints.

pub mod config;
pub mod diagnostics;
pub mod dual;
pub mod error;
pub mod fidelity;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod sign;
pub mod signature;
pub mod state;

mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// The attack itself runs in 64-bit floats; these aliases pin the concrete
/// scalar used throughout the extraction stack.
pub type Network = model::MlpNetwork<f64>;
pub type AffineMap = model::LocalAffineMap<f64>;
pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
