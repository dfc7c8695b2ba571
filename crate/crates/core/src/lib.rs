//! Sensitivity analysis and unbiased risk estimation for partly smooth
//! regularized regression.
//!
//! The crate solves problems of the form
//!
//! ```text
//! minimize_x  ½‖X x − y‖² + λ J(x)
//! ```
//!
//! where `J` is a partly smooth regularizer (Lasso, general Lasso, group
//! Lasso, isotropic total variation, ℓ∞, nuclear norm, or the hinge on the
//! unit sphere). At a solution it identifies the active manifold, builds the
//! Riemannian Hessian of the penalty on it and evaluates the Jacobian of
//! `y ↦ X x̂(y)` in closed form. The trace of that Jacobian (the degrees of
//! freedom) feeds Stein's unbiased risk estimate, which is then used to pick
//! `λ` on a grid.
//!
//! Module map:
//! - [`linop`]: designs and analysis operators with exact adjoints.
//! - [`penalty`]: proximity operators, manifold identification, tangent
//!   projectors and Riemannian Hessians.
//! - [`solver`]: Douglas-Rachford splitting and the bordered tangent system.
//! - [`sensitivity`]: restricted positive definiteness, solution Jacobian,
//!   divergence estimators and solution repair.
//! - [`risk`]: SURE / GSURE and risk curves over a `λ` grid.
//! - [`harness`]: experiment configuration, runner and invariant checks.

pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod linop;
pub mod penalty;
pub mod risk;
pub mod seeds;
pub mod sensitivity;
pub mod solver;

pub use error::{Error, Result};
pub use linop::LinearMap;
pub use penalty::{ActiveModel, Blocks, ManifoldId, Penalty, PenaltyKind};
pub use risk::{GlmSpec, LinkMap, RiskCurve};
pub use sensitivity::{DivergenceMethod, SensitivityReport};
pub use solver::{LossModel, SolveOptions, SolveResult};

/// Dense column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense column-major matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
