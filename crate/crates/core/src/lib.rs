//! Manifold-projected neural ODEs.
//!
//! A learned vector field `du/dt = f(u, θ, t)` is integrated with fixed-step
//! RK4, and after every step the state is projected back onto the manifold
//! `{u : g(u, t) = 0}` defined by known algebraic invariants. Gradients flow
//! through the unrolled integrator by reverse-mode differentiation and
//! through each projection by the implicit function theorem.

// `!(x <= tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod odeint;
pub mod projection;
pub mod systems;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use projection::{ConstraintSpec, ProjectionConfig, ProjectionResult, Variant};
