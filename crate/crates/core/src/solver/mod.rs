//! Douglas-Rachford solver for `min ½‖X x − y‖² + λ J(x)` and the tangent
//! linear systems used by the sensitivity analysis.

mod dr;
pub mod krylov;
mod polish;
pub mod saddle;

use thiserror::Error;

use crate::linop::{LinearMap, LinopError};
use crate::penalty::{ActiveModel, Penalty, PenaltyError};
use crate::Vector;

pub use saddle::{solve_saddle, SaddleMethod, SaddleOptions, SaddleSolution, TangentSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: expected length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("Krylov solver stagnated after {iterations} iterations at relative residual {residual:.3e}")]
    Krylov { iterations: usize, residual: f64 },
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Linop(#[from] LinopError),
}

/// Squared loss `F(x, y) = ½‖y − X x‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossModel {
    pub y: Vector,
}

impl LossModel {
    pub fn squared(y: Vector) -> Self {
        Self { y }
    }

    /// `½‖y − μ‖²`.
    pub fn value(&self, mu: &Vector) -> f64 {
        0.5 * (mu - &self.y).norm_squared()
    }

    /// `∇_μ F0 = μ − y`.
    pub fn gradient(&self, mu: &Vector) -> Vector {
        mu - &self.y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    /// Douglas-Rachford iteration budget.
    pub iterations: usize,
    /// Target for the distance of `−∇F` to `∂(λJ)`, relative to `1 + ‖X* y‖`.
    pub kkt_tol: f64,
    /// Douglas-Rachford step, used when `gamma_scale` is `None` or `λ = 0`.
    pub gamma: f64,
    /// When set, the step is `gamma_scale · rms(X* y) / λ` instead of
    /// `gamma`, which keeps the threshold `γλ` proportional to the data.
    pub gamma_scale: Option<f64>,
    /// Finish with Newton iterations on the identified manifold.
    pub polish: bool,
    /// Random starting point drawn from this seed instead of the origin.
    pub init_seed: Option<u64>,
    /// Record the objective every 100 iterations.
    pub record_objective: bool,
    pub saddle: SaddleOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            kkt_tol: 1e-8,
            gamma: 1.0,
            gamma_scale: Some(0.1),
            polish: true,
            init_seed: None,
            record_objective: false,
            saddle: SaddleOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub x_hat: Vector,
    pub mu_hat: Vector,
    /// Distance of `−X*(X x̂ − y)` to `∂(λJ)(x̂)`.
    pub kkt_residual: f64,
    /// Absolute tolerance the residual was compared against.
    pub kkt_target: f64,
    pub iterations: usize,
    pub certificate_margin: f64,
    pub active: ActiveModel,
    pub converged: bool,
    pub objective: f64,
    /// `(iteration, objective)` of the shadow sequence every 100 iterations.
    pub objective_trace: Vec<(usize, f64)>,
    /// The returned point came from the manifold Newton step.
    pub polished: bool,
}

/// Objective `½‖X x − y‖² + λ J(x)`.
pub fn objective(x: &LinearMap, loss: &LossModel, j: &Penalty, xv: &Vector) -> Result<f64, SolverError> {
    Ok(loss.value(&x.apply(xv)?) + j.value(xv)?)
}

pub fn solve(x: &LinearMap, loss: &LossModel, j: &Penalty, opts: &SolveOptions) -> Result<SolveResult, SolverError> {
    solve_from(x, loss, j, opts, None)
}

/// Solves starting from `init` (a warm start) when given.
pub fn solve_from(
    x: &LinearMap,
    loss: &LossModel,
    j: &Penalty,
    opts: &SolveOptions,
    init: Option<&Vector>,
) -> Result<SolveResult, SolverError> {
    if loss.y.len() != x.rows() {
        return Err(SolverError::DimensionMismatch {
            expected: x.rows(),
            found: loss.y.len(),
        });
    }
    j.check_dim(x.cols())?;
    if let Some(v) = init {
        if v.len() != x.cols() {
            return Err(SolverError::DimensionMismatch {
                expected: x.cols(),
                found: v.len(),
            });
        }
    }
    if !(opts.gamma > 0.0) || !(opts.kkt_tol > 0.0) || opts.gamma_scale.is_some_and(|c| !(c > 0.0)) {
        return Err(SolverError::InvalidOption("gamma and kkt_tol must be positive".into()));
    }
    dr::run(x, loss, j, opts, init)
}

/// Wraps an arbitrary point as a result: identified manifold, certificate and
/// residual, with `converged` judged against `kkt_target`.
pub fn evaluate(x: &LinearMap, loss: &LossModel, j: &Penalty, xv: &Vector, kkt_target: f64) -> Result<SolveResult, SolverError> {
    if xv.len() != x.cols() || loss.y.len() != x.rows() {
        return Err(SolverError::DimensionMismatch { expected: x.cols(), found: xv.len() });
    }
    Ok(evaluate_model(x, loss, j, j.identify(xv)?, kkt_target))
}

pub(crate) fn evaluate_model(x: &LinearMap, loss: &LossModel, j: &Penalty, model: ActiveModel, kkt_target: f64) -> SolveResult {
    let (model, cert, mu, _) = assess(x, loss, j, model);
    let value = loss.value(&mu) + j.value(&model.point).unwrap_or(f64::INFINITY);
    SolveResult {
        x_hat: model.point.clone(),
        mu_hat: mu,
        kkt_residual: cert.kkt,
        kkt_target,
        iterations: 0,
        certificate_margin: cert.margin,
        converged: cert.kkt <= kkt_target,
        objective: value,
        active: model,
        objective_trace: Vec::new(),
        polished: false,
    }
}

/// Loss gradient `X*∇F(X x)` at the model point, recorded on the model.
pub(crate) fn with_gradient(x: &LinearMap, loss: &LossModel, mut model: ActiveModel) -> (ActiveModel, Vector) {
    let mu = x.apply_unchecked(&model.point);
    let grad = x.adjoint_unchecked(&loss.gradient(&mu));
    model.set_loss_gradient(&grad);
    (model, grad)
}

/// Evaluates a candidate point: identification, certificate and residual.
pub(crate) fn assess(
    x: &LinearMap,
    loss: &LossModel,
    j: &Penalty,
    mut model: ActiveModel,
) -> (ActiveModel, crate::penalty::Certificate, Vector, Vector) {
    let xv = model.point.clone();
    let mu = x.apply_unchecked(&xv);
    let grad = x.adjoint_unchecked(&loss.gradient(&mu));
    let cert = j.certificate(&model, &(-&grad));
    model.set_loss_gradient(&grad);
    (model, cert, mu, grad)
}
