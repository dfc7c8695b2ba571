//! The linear system `P_T (X*X + Q) P_T ν = P_T b` on the tangent space,
//! solved either densely in a tangent basis or as the bordered system
//!
//! ```text
//! [ X*X + Q   C ] [ν]   [b]
//! [ C*        0 ] [η] = [0]
//! ```
//!
//! where the columns of `C` span `S = T^⊥`.

use super::krylov::minres;
use super::SolverError;
use crate::linalg::SymPinv;
use crate::linop::LinearMap;
use crate::penalty::ActiveModel;
use crate::{Matrix, Vector};

/// Relative eigenvalue cutoff of the tangent pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-10;

/// Dense restriction of `X*X + Q` (plus loss curvature) to `T`.
#[derive(Clone, Debug)]
pub struct TangentSystem {
    /// Orthonormal tangent basis `B`.
    pub basis: Matrix,
    /// `X B`.
    pub xb: Matrix,
    /// `Bᵀ (X*X + curvature + Q) B`.
    pub matrix: Matrix,
    pinv: SymPinv,
}

impl TangentSystem {
    pub fn new(x: &LinearMap, model: &ActiveModel) -> Result<Self, SolverError> {
        let xb = x.apply_matrix(&model.basis)?;
        let matrix = xb.tr_mul(&xb) + &model.hessian + &model.curvature;
        let pinv = SymPinv::new(&matrix, PINV_RTOL);
        Ok(Self {
            basis: model.basis.clone(),
            xb,
            matrix,
            pinv,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.pinv.min_eigenvalue()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.pinv.max_eigenvalue()
    }

    pub fn rank(&self) -> usize {
        self.pinv.rank()
    }

    /// `ν = B H⁺ Bᵀ b`.
    pub fn solve(&self, rhs: &Vector) -> Vector {
        &self.basis * self.pinv.apply(&self.basis.tr_mul(rhs))
    }

    /// `H⁺ c` in tangent coordinates.
    pub fn solve_coords(&self, c: &Vector) -> Vector {
        self.pinv.apply(c)
    }

    /// `H⁺` in tangent coordinates.
    pub fn pinv_matrix(&self) -> Matrix {
        self.pinv.matrix()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SaddleMethod {
    /// Dense when `p ≤ dense_max_dim`, Krylov otherwise.
    #[default]
    Auto,
    Dense,
    Krylov,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaddleOptions {
    pub method: SaddleMethod,
    pub tol: f64,
    pub maxit: usize,
    pub dense_max_dim: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            method: SaddleMethod::Auto,
            tol: 1e-7,
            maxit: 20_000,
            dense_max_dim: 2000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SaddleSolution {
    pub nu: Vector,
    /// `‖P_T((X*X + Q) ν − b)‖ / ‖b‖` for the dense path, the relative
    /// residual of the bordered system for the Krylov path.
    pub residual: f64,
    pub iterations: usize,
    pub method: SaddleMethod,
    /// The right-hand side was not in the range of the restricted operator;
    /// `nu` is then a least-squares solution.
    pub inconsistent: bool,
}

/// `ν ∈ T` with `P_T (X*X + Q) ν = P_T rhs`.
pub fn solve_saddle(
    x: &LinearMap,
    model: &ActiveModel,
    rhs: &Vector,
    opts: &SaddleOptions,
) -> Result<SaddleSolution, SolverError> {
    if rhs.len() != model.dim {
        return Err(SolverError::DimensionMismatch {
            expected: model.dim,
            found: rhs.len(),
        });
    }
    let dense = match opts.method {
        SaddleMethod::Dense => true,
        SaddleMethod::Krylov => false,
        SaddleMethod::Auto => model.dim <= opts.dense_max_dim,
    };
    if dense {
        let sys = TangentSystem::new(x, model)?;
        Ok(dense_solve(&sys, rhs, opts.tol))
    } else {
        krylov_solve(x, model, rhs, opts)
    }
}

pub(crate) fn dense_solve(sys: &TangentSystem, rhs: &Vector, tol: f64) -> SaddleSolution {
    let c = sys.basis.tr_mul(rhs);
    let coords = sys.solve_coords(&c);
    let res = &sys.matrix * &coords - &c;
    let nb = rhs.norm().max(f64::MIN_POSITIVE);
    let residual = res.norm() / nb;
    SaddleSolution {
        nu: &sys.basis * coords,
        residual,
        iterations: 0,
        method: SaddleMethod::Dense,
        inconsistent: residual > tol,
    }
}

/// Applies the bordered operator to `(ν, η)` stacked in one vector.
pub(crate) fn bordered_apply(x: &LinearMap, model: &ActiveModel, v: &Vector) -> Vector {
    let p = model.dim;
    let constraint = model.constraint();
    let c = constraint.dim();
    let nu = v.rows(0, p).into_owned();
    let eta = v.rows(p, c).into_owned();
    let top = x.adjoint_unchecked(&x.apply_unchecked(&nu)) + model.q_full_apply(&nu) + constraint.apply(&eta, p);
    let bottom = constraint.adjoint(&nu);
    let mut out = Vector::zeros(p + c);
    out.rows_mut(0, p).copy_from(&top);
    out.rows_mut(p, c).copy_from(&bottom);
    out
}

fn krylov_solve(
    x: &LinearMap,
    model: &ActiveModel,
    rhs: &Vector,
    opts: &SaddleOptions,
) -> Result<SaddleSolution, SolverError> {
    let p = model.dim;
    let c = model.constraint().dim();
    let mut b = Vector::zeros(p + c);
    b.rows_mut(0, p).copy_from(rhs);
    let out = minres(|v| bordered_apply(x, model, v), &b, opts.tol, opts.maxit);
    if !out.converged {
        return Err(SolverError::Krylov {
            iterations: out.iterations,
            residual: out.residual,
        });
    }
    Ok(SaddleSolution {
        nu: out.x.rows(0, p).into_owned(),
        residual: out.residual,
        iterations: out.iterations,
        method: SaddleMethod::Krylov,
        inconsistent: false,
    })
}
