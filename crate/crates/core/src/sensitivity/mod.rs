//! Local sensitivity of the solution map: restricted positive definiteness,
//! the Jacobian of `y ↦ x̂(y)`, the divergence operator
//! `Δ(y) = X_T (X_T* X_T + Q)⁺ X_T*` and estimators of its trace.

mod closed_form;
mod repair;

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::sym_eigen;
use crate::linop::{LinearMap, LinopError};
use crate::penalty::{ActiveModel, Penalty, PenaltyError};
use crate::solver::{solve_from, solve_saddle, LossModel, SaddleMethod, SaddleOptions, SolveOptions, SolveResult, SolverError, TangentSystem};
use crate::{seeds, Matrix, Vector};

pub use closed_form::{closed_form_divergence, orthonormal_group_dof};
pub use repair::{repair_solution, RepairOutcome, RepairStep};

/// Default relative tolerance of the restricted positive definiteness test,
/// relative to `‖X*X‖`.
pub const PD_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("restricted positive definiteness fails: smallest eigenvalue {min_eigenvalue:.3e} ≤ {tol:.3e}")]
    NotInjective { min_eigenvalue: f64, tol: f64 },
    #[error("unsupported penalty: {0}")]
    Unsupported(String),
    #[error("no kernel direction found although restricted injectivity fails")]
    NoKernelDirection,
    #[error("invalid method: {0}")]
    InvalidMethod(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Linop(#[from] LinopError),
}

/// Probe distribution of the finite-difference estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProbeKind {
    /// i.i.d. standard normal probes; the estimate is their mean.
    #[default]
    Gaussian,
    /// All canonical vectors of the observation space; the estimate is the
    /// sum and `probes` is ignored.
    Canonical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DivergenceMethod {
    ClosedForm,
    ExactTrace,
    MonteCarlo { probes: usize, seed: u64 },
    /// `eps = None` uses `1e-6 (1 + ‖y‖)`.
    FiniteDifference { eps: Option<f64>, probes: usize, seed: u64, probe: ProbeKind },
}

#[derive(Clone, Debug)]
pub struct SensitivityOptions {
    pub saddle: SaddleOptions,
    pub pd_rtol: f64,
    /// Options of the perturbed solves of the finite-difference estimator.
    pub solve: SolveOptions,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            saddle: SaddleOptions::default(),
            pd_rtol: PD_RTOL,
            solve: SolveOptions {
                kkt_tol: 1e-12,
                ..SolveOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct SensitivityReport {
    pub cinj: bool,
    pub min_restricted_eigenvalue: f64,
    pub tangent_dim: usize,
    pub divergence: f64,
    /// Method actually used (the closed form falls back to the exact trace
    /// when unavailable).
    pub method: DivergenceMethod,
    pub mc_std_error: Option<f64>,
    pub certificate_margin: f64,
    /// Individual probe values of the stochastic estimators.
    pub samples: Vec<f64>,
}

/// Outcome of [`check_restricted_pd`] with the tolerance used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestrictedPd {
    pub cinj: bool,
    pub min_eigenvalue: f64,
    pub tol: f64,
}

/// Smallest eigenvalue of `X*X + Q` (plus loss curvature) on `T` and whether
/// it exceeds `pd_rtol ‖X*X‖`. An empty tangent space passes with `+∞`.
pub fn restricted_pd(x: &LinearMap, model: &ActiveModel, pd_rtol: f64) -> Result<RestrictedPd, SensitivityError> {
    let nx = x.norm_estimate(60);
    let tol = pd_rtol * (nx * nx).max(f64::MIN_POSITIVE);
    if model.tangent_dim == 0 {
        return Ok(RestrictedPd {
            cinj: true,
            min_eigenvalue: f64::INFINITY,
            tol,
        });
    }
    let sys = TangentSystem::new(x, model)?;
    let (vals, _) = sym_eigen(&sys.matrix);
    let min = vals[0];
    Ok(RestrictedPd {
        cinj: min > tol,
        min_eigenvalue: min,
        tol,
    })
}

/// `(cinj, min_eigenvalue)` with the default tolerance.
pub fn check_restricted_pd(x: &LinearMap, model: &ActiveModel) -> Result<(bool, f64), SensitivityError> {
    let r = restricted_pd(x, model, PD_RTOL)?;
    Ok((r.cinj, r.min_eigenvalue))
}

fn require_injective(x: &LinearMap, model: &ActiveModel) -> Result<(), SensitivityError> {
    let r = restricted_pd(x, model, PD_RTOL)?;
    if r.cinj {
        Ok(())
    } else {
        Err(SensitivityError::NotInjective {
            min_eigenvalue: r.min_eigenvalue,
            tol: r.tol,
        })
    }
}

/// Directional derivative `(P_T (X*X + Q) P_T)⁺ X* dy` of the solution map.
/// The model must carry the loss gradient (as the models returned by the
/// solver do) and the certificate margin should be positive.
pub fn solution_jacobian_apply(
    x: &LinearMap,
    model: &ActiveModel,
    dy: &Vector,
    opts: &SaddleOptions,
) -> Result<Vector, SensitivityError> {
    require_injective(x, model)?;
    let rhs = x.adjoint_apply(dy)?;
    Ok(solve_saddle(x, model, &rhs, opts)?.nu)
}

/// `Δ(y) z`.
pub fn delta_apply(x: &LinearMap, model: &ActiveModel, z: &Vector, opts: &SaddleOptions) -> Result<Vector, SensitivityError> {
    require_injective(x, model)?;
    DeltaOperator::new(x, model, opts)?.apply(z)
}

/// `Δ(y)` prepared for repeated application.
pub struct DeltaOperator<'a> {
    x: &'a LinearMap,
    model: &'a ActiveModel,
    opts: SaddleOptions,
    /// `(X B, H⁺)` on the dense path.
    dense: Option<(Matrix, Matrix)>,
}

impl<'a> DeltaOperator<'a> {
    pub fn new(x: &'a LinearMap, model: &'a ActiveModel, opts: &SaddleOptions) -> Result<Self, SensitivityError> {
        let use_dense = match opts.method {
            SaddleMethod::Dense => true,
            SaddleMethod::Krylov => false,
            SaddleMethod::Auto => model.dim <= opts.dense_max_dim,
        };
        let dense = if use_dense {
            let sys = TangentSystem::new(x, model)?;
            Some((sys.xb.clone(), sys.pinv_matrix()))
        } else {
            None
        };
        Ok(Self {
            x,
            model,
            opts: *opts,
            dense,
        })
    }

    pub fn apply(&self, z: &Vector) -> Result<Vector, SensitivityError> {
        if z.len() != self.x.rows() {
            return Err(LinopError::DimensionMismatch {
                expected: self.x.rows(),
                found: z.len(),
            }
            .into());
        }
        match &self.dense {
            Some((xb, pinv)) => Ok(xb * (pinv * xb.tr_mul(z))),
            None => {
                let rhs = self.x.adjoint_unchecked(z);
                let nu = solve_saddle(self.x, self.model, &rhs, &self.opts)?.nu;
                Ok(self.x.apply_unchecked(&nu))
            }
        }
    }

    /// `Σ_i ⟨e_i, Δ e_i⟩`.
    pub fn exact_trace(&self) -> Result<f64, SensitivityError> {
        let n = self.x.rows();
        let mut total = 0.0;
        for i in 0..n {
            let mut e = Vector::zeros(n);
            e[i] = 1.0;
            total += self.apply(&e)?[i];
        }
        Ok(total)
    }
}

/// Probe `k` of the stochastic estimators; shared by the Monte-Carlo and
/// finite-difference methods so that both see the same vectors.
pub fn probe(seed: u64, k: usize, n: usize) -> Vector {
    seeds::normal_vector(&mut seeds::rng(seed, &[0x9e0b, k as u64]), n)
}

fn mean_and_error(samples: &[f64]) -> (f64, Option<f64>) {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    if samples.len() < 2 {
        return (mean, None);
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (k - 1.0);
    (mean, Some((var / k).sqrt()))
}

/// Divergence of the prediction map at the solution `result`.
pub fn divergence(
    x: &LinearMap,
    loss: &LossModel,
    j: &Penalty,
    result: &SolveResult,
    method: DivergenceMethod,
    opts: &SensitivityOptions,
) -> Result<SensitivityReport, SensitivityError> {
    let model = &result.active;
    let pd = restricted_pd(x, model, opts.pd_rtol)?;
    let mut report = SensitivityReport {
        cinj: pd.cinj,
        min_restricted_eigenvalue: pd.min_eigenvalue,
        tangent_dim: model.tangent_dim,
        divergence: f64::NAN,
        method,
        mc_std_error: None,
        certificate_margin: result.certificate_margin,
        samples: Vec::new(),
    };
    let n = x.rows();
    match method {
        DivergenceMethod::ClosedForm => match closed_form_divergence(x, j, model)? {
            Some(v) => report.divergence = v,
            None => {
                log::warn!("no closed-form divergence for this penalty; using the exact trace");
                report.method = DivergenceMethod::ExactTrace;
                report.divergence = DeltaOperator::new(x, model, &opts.saddle)?.exact_trace()?;
            }
        },
        DivergenceMethod::ExactTrace => {
            report.divergence = DeltaOperator::new(x, model, &opts.saddle)?.exact_trace()?;
        }
        DivergenceMethod::MonteCarlo { probes, seed } => {
            if probes == 0 {
                return Err(SensitivityError::InvalidMethod("Monte-Carlo needs at least one probe".into()));
            }
            let delta = DeltaOperator::new(x, model, &opts.saddle)?;
            let samples = (0..probes)
                .into_par_iter()
                .map(|k| {
                    let z = probe(seed, k, n);
                    delta.apply(&z).map(|dz| z.dot(&dz))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let (mean, err) = mean_and_error(&samples);
            report.divergence = mean;
            report.mc_std_error = err;
            report.samples = samples;
        }
        DivergenceMethod::FiniteDifference { eps, probes, seed, probe: kind } => {
            let eps = eps.unwrap_or(1e-6 * (1.0 + loss.y.norm()));
            if !(eps > 0.0) {
                return Err(SensitivityError::InvalidMethod("finite-difference step must be positive".into()));
            }
            let count = match kind {
                ProbeKind::Gaussian => probes,
                ProbeKind::Canonical => n,
            };
            if count == 0 {
                return Err(SensitivityError::InvalidMethod("finite differences need at least one probe".into()));
            }
            let samples = (0..count)
                .into_par_iter()
                .map(|k| {
                    let z = match kind {
                        ProbeKind::Gaussian => probe(seed, k, n),
                        ProbeKind::Canonical => {
                            let mut e = Vector::zeros(n);
                            e[k] = 1.0;
                            e
                        }
                    };
                    let shifted = LossModel::squared(&loss.y + &z * eps);
                    let r = solve_from(x, &shifted, j, &opts.solve, Some(&result.x_hat))?;
                    Ok(z.dot(&(&r.mu_hat - &result.mu_hat)) / eps)
                })
                .collect::<Result<Vec<f64>, SensitivityError>>()?;
            match kind {
                ProbeKind::Gaussian => {
                    let (mean, err) = mean_and_error(&samples);
                    report.divergence = mean;
                    report.mc_std_error = err;
                }
                ProbeKind::Canonical => report.divergence = samples.iter().sum(),
            }
            report.samples = samples;
        }
    }
    Ok(report)
}
