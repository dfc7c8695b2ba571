//! Partly smooth regularizers.
//!
//! A [`Penalty`] is `λ·J` for one of the supported base penalties. Given a
//! point, [`Penalty::identify`] reads off the active manifold and returns an
//! [`ActiveModel`] holding an orthonormal basis of the tangent space `T`, the
//! Riemannian gradient `e_x` and the Riemannian Hessian `Q` in that basis.
//! All quantities carry the factor `λ`.

mod group;
mod linf;
mod nuclear;
mod sphere;

use thiserror::Error;

use crate::linalg::{orthonormal_complement, RankFactor};
use crate::linop::{LinearMap, LinopError};
use crate::{Matrix, Vector};

pub(crate) use group::block_soft_threshold;
pub(crate) use linf::identify_set as identify_linf_set;
pub use nuclear::{mat_to_vec, vec_to_mat};

/// Relative identification tolerance used by [`Penalty::identify`].
pub const IDENTIFY_RTOL: f64 = 1e-6;

/// On-manifold mismatch beyond which a certificate margin is forced negative,
/// relative to `max(1, λ)`.
pub const MISMATCH_RTOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PenaltyError {
    #[error("dimension mismatch: expected length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid blocks: {0}")]
    InvalidBlocks(String),
    #[error("weight must be finite and non-negative, got {0}")]
    InvalidWeight(f64),
    #[error("step must be positive, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Linop(#[from] LinopError),
}

/// A partition of `0..dim` into blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Blocks {
    dim: usize,
    groups: Vec<Vec<usize>>,
}

impl Blocks {
    pub fn new(groups: Vec<Vec<usize>>, dim: usize) -> Result<Self, PenaltyError> {
        let mut seen = vec![false; dim];
        for g in &groups {
            if g.is_empty() {
                return Err(PenaltyError::InvalidBlocks("empty block".into()));
            }
            for &i in g {
                if i >= dim {
                    return Err(PenaltyError::InvalidBlocks(format!("index {i} out of range {dim}")));
                }
                if seen[i] {
                    return Err(PenaltyError::InvalidBlocks(format!("index {i} in two blocks")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(PenaltyError::InvalidBlocks(format!("index {i} not covered")));
        }
        Ok(Self { dim, groups })
    }

    /// Consecutive blocks of the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self, PenaltyError> {
        let mut groups = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            groups.push((start..start + s).collect());
            start += s;
        }
        Self::new(groups, start)
    }

    /// `count` consecutive blocks of equal `size`.
    pub fn uniform(count: usize, size: usize) -> Result<Self, PenaltyError> {
        Self::contiguous(&vec![size; count])
    }

    pub fn singletons(dim: usize) -> Self {
        Self {
            dim,
            groups: (0..dim).map(|i| vec![i]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

#[derive(Clone, Debug)]
pub enum PenaltyKind {
    /// `‖x‖₁`.
    Lasso,
    /// `‖D* x‖₁`; the field holds `D*`.
    GeneralLasso { analysis: LinearMap },
    /// `Σ_b ‖x_b‖₂`.
    GroupLasso { blocks: Blocks },
    /// `Σ_b ‖(D* x)_b‖₂`; isotropic total variation is `D* = grad2d` with
    /// blocks of size two.
    GeneralGroupLasso { analysis: LinearMap, blocks: Blocks },
    /// `‖x‖∞`.
    Linf,
    /// Nuclear norm of the `rows × cols` matrix stored column-major in `x`.
    Nuclear { rows: usize, cols: usize },
    /// `max(‖x‖₂ − 1, 0)`.
    SphereHinge,
}

/// `λ · J`.
#[derive(Clone, Debug)]
pub struct Penalty {
    pub kind: PenaltyKind,
    pub lambda: f64,
}

/// Position relative to the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SphereRegion {
    Inside,
    On,
    Outside,
}

/// Canonical description of an active manifold.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ManifoldId {
    /// No regularization: the whole space.
    Full,
    /// Support of `x` (Lasso) or of `D* x` (general Lasso).
    Support(Vec<usize>),
    /// Indices of the blocks where `x_b` (or `(D* x)_b`) is nonzero.
    BlockSupport(Vec<usize>),
    /// Coordinates attaining `‖x‖∞` with their signs.
    Saturation { indices: Vec<usize>, signs: Vec<i8> },
    /// The origin, for the ℓ∞ penalty.
    Origin,
    Rank(usize),
    Sphere(SphereRegion),
}

impl ManifoldId {
    /// Number of active atoms (support size, block count, rank, …).
    pub fn active_size(&self) -> usize {
        match self {
            Self::Full => usize::MAX,
            Self::Support(s) | Self::BlockSupport(s) => s.len(),
            Self::Saturation { indices, .. } => indices.len(),
            Self::Origin => 0,
            Self::Rank(r) => *r,
            Self::Sphere(_) => 1,
        }
    }
}

/// Group-family data kept for the bordered system, certificates and repair.
#[derive(Clone, Debug)]
pub(crate) struct GroupData {
    pub analysis: Option<LinearMap>,
    pub blocks: Vec<Vec<usize>>,
    /// Coefficients `D* x` (or `x`).
    pub coeffs: Vector,
    pub active: Vec<usize>,
    /// Coefficient rows belonging to inactive blocks.
    pub inactive_rows: Vec<usize>,
    /// Factorization of `D*_{Λᶜ}` (analysis kinds only).
    pub inactive_factor: Option<RankFactor>,
}

#[derive(Clone, Debug)]
pub(crate) enum Structure {
    Full,
    Group(GroupData),
    Linf { saturated: Vec<usize>, signs: Vec<f64> },
    Nuclear { rows: usize, cols: usize, u: Matrix, s: Vec<f64>, v: Matrix },
    Sphere { region: SphereRegion },
}

/// Snapshot of the active manifold of a penalty at a point.
#[derive(Clone, Debug)]
pub struct ActiveModel {
    pub lambda: f64,
    pub dim: usize,
    pub manifold_id: ManifoldId,
    pub tangent_dim: usize,
    /// Orthonormal basis of `T`, `dim × tangent_dim`.
    pub basis: Matrix,
    /// Riemannian gradient of `λJ`, an element of `T`.
    pub e_x: Vector,
    /// Riemannian Hessian of `λJ` in the coordinates of `basis`.
    pub hessian: Matrix,
    /// Curvature contribution of the loss on a curved manifold, in the
    /// coordinates of `basis`; zero until [`ActiveModel::set_loss_gradient`].
    pub curvature: Matrix,
    /// Normal component `P_S ∇F` of the loss gradient, when set.
    pub loss_normal: Option<Vector>,
    /// Manifold could not be read off unambiguously.
    pub degenerate: bool,
    /// The point at which the model was built.
    pub point: Vector,
    pub(crate) structure: Structure,
}

impl ActiveModel {
    pub(crate) fn new(
        lambda: f64,
        point: Vector,
        manifold_id: ManifoldId,
        basis: Matrix,
        e_x: Vector,
        hessian: Matrix,
        structure: Structure,
    ) -> Self {
        let k = basis.ncols();
        Self {
            lambda,
            dim: point.len(),
            manifold_id,
            tangent_dim: k,
            basis,
            e_x,
            hessian,
            curvature: Matrix::zeros(k, k),
            loss_normal: None,
            degenerate: false,
            point,
            structure,
        }
    }

    pub(crate) fn full(lambda: f64, point: Vector) -> Self {
        let p = point.len();
        Self::new(
            lambda,
            point,
            ManifoldId::Full,
            Matrix::identity(p, p),
            Vector::zeros(p),
            Matrix::zeros(p, p),
            Structure::Full,
        )
    }

    /// `P_T v`.
    pub fn project(&self, v: &Vector) -> Vector {
        &self.basis * self.basis.tr_mul(v)
    }

    /// Dense tangent projector `P_T`.
    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    /// `Q ξ` for `ξ ∈ T`.
    pub fn hessian_apply(&self, xi: &Vector) -> Vector {
        &self.basis * (&self.hessian * self.basis.tr_mul(xi))
    }

    /// Curvature term of the loss applied to `ξ ∈ T`.
    pub fn curvature_apply(&self, xi: &Vector) -> Vector {
        &self.basis * (&self.curvature * self.basis.tr_mul(xi))
    }

    /// Whether the manifold is curved (so the loss contributes a curvature
    /// term through its normal gradient).
    pub fn is_curved(&self) -> bool {
        match &self.structure {
            Structure::Nuclear { rows, cols, s, .. } => s.len() < (*rows).min(*cols),
            Structure::Sphere { region } => *region == SphereRegion::On,
            _ => false,
        }
    }

    /// Records the loss gradient `∇F(x)` and derives the curvature term from
    /// its normal part.
    pub fn set_loss_gradient(&mut self, grad: &Vector) {
        let normal = grad - self.project(grad);
        let k = self.tangent_dim;
        let mut curv = Matrix::zeros(k, k);
        if self.is_curved() {
            for j in 0..k {
                let xi = self.basis.column(j).into_owned();
                let w = self.weingarten(&xi, &normal);
                curv.set_column(j, &self.basis.tr_mul(&w));
            }
        }
        self.curvature = curv;
        self.loss_normal = Some(normal);
    }

    /// Weingarten map `A_x(ξ, w)` for tangent `ξ` and normal `w`.
    fn weingarten(&self, xi: &Vector, w: &Vector) -> Vector {
        match &self.structure {
            Structure::Sphere { .. } => {
                let n2 = self.point.norm_squared();
                xi * (-self.point.dot(w) / n2)
            }
            Structure::Nuclear { rows, cols, u, s, v } => {
                nuclear::weingarten(*rows, *cols, u, s, v, xi, w)
            }
            _ => Vector::zeros(self.dim),
        }
    }

    /// Columns spanning `S = T^⊥` as used by the bordered tangent system, in
    /// the cheapest available form.
    pub(crate) fn constraint(&self) -> Constraint<'_> {
        match &self.structure {
            Structure::Full => Constraint::None,
            Structure::Group(g) => match &g.analysis {
                None => Constraint::Coordinates(&g.inactive_rows),
                Some(a) => Constraint::Analysis {
                    analysis: a,
                    rows: &g.inactive_rows,
                },
            },
            _ => Constraint::Dense(orthonormal_complement(&self.basis, self.dim)),
        }
    }

    /// Full-space operator whose compression to `T` is `Q` plus the loss
    /// curvature.
    pub(crate) fn q_full_apply(&self, v: &Vector) -> Vector {
        match &self.structure {
            Structure::Full => Vector::zeros(self.dim),
            Structure::Group(g) => group::delta_q_full(self.lambda, g, v),
            _ => &self.basis * ((&self.hessian + &self.curvature) * self.basis.tr_mul(v)),
        }
    }
}

/// Representation of `S = T^⊥` for the bordered system.
pub(crate) enum Constraint<'a> {
    None,
    /// `S` spanned by the canonical vectors of these coordinates.
    Coordinates(&'a [usize]),
    /// `S = Im(D_{Λᶜ})` with `D*` the analysis operator and `Λᶜ` these rows.
    Analysis { analysis: &'a LinearMap, rows: &'a [usize] },
    /// Explicit basis of `S`.
    Dense(Matrix),
}

impl Constraint<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Self::None => 0,
            Self::Coordinates(r) | Self::Analysis { rows: r, .. } => r.len(),
            Self::Dense(m) => m.ncols(),
        }
    }

    /// `C η`.
    pub fn apply(&self, eta: &Vector, p: usize) -> Vector {
        match self {
            Self::None => Vector::zeros(p),
            Self::Coordinates(rows) => {
                let mut out = Vector::zeros(p);
                for (k, &i) in rows.iter().enumerate() {
                    out[i] = eta[k];
                }
                out
            }
            Self::Analysis { analysis, rows } => {
                let mut z = Vector::zeros(analysis.rows());
                for (k, &i) in rows.iter().enumerate() {
                    z[i] = eta[k];
                }
                analysis.adjoint_unchecked(&z)
            }
            Self::Dense(m) => m * eta,
        }
    }

    /// `C* v`.
    pub fn adjoint(&self, v: &Vector) -> Vector {
        match self {
            Self::None => Vector::zeros(0),
            Self::Coordinates(rows) => Vector::from_iterator(rows.len(), rows.iter().map(|&i| v[i])),
            Self::Analysis { analysis, rows } => {
                let z = analysis.apply_unchecked(v);
                Vector::from_iterator(rows.len(), rows.iter().map(|&i| z[i]))
            }
            Self::Dense(m) => m.tr_mul(v),
        }
    }
}

/// Optimality information of a point with respect to `−∇F ∈ ∂(λJ)(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Certificate {
    /// Relative distance of `g` to the relative boundary of `∂(λJ)(x)`;
    /// negative when `g ∉ ∂(λJ)(x)`.
    pub margin: f64,
    /// Upper bound on the Euclidean distance from `g` to `∂(λJ)(x)`.
    pub kkt: f64,
}

impl Penalty {
    pub fn new(kind: PenaltyKind, lambda: f64) -> Result<Self, PenaltyError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(PenaltyError::InvalidWeight(lambda));
        }
        match &kind {
            PenaltyKind::GeneralGroupLasso { analysis, blocks } if analysis.rows() != blocks.dim() => {
                return Err(PenaltyError::InvalidBlocks(format!(
                    "blocks cover {} coefficients but the analysis operator has {} rows",
                    blocks.dim(),
                    analysis.rows()
                )));
            }
            _ => {}
        }
        Ok(Self { kind, lambda })
    }

    pub fn lasso(lambda: f64) -> Self {
        Self { kind: PenaltyKind::Lasso, lambda }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            kind: self.kind.clone(),
            lambda,
        }
    }

    /// Required signal dimension, when fixed by the kind.
    pub fn fixed_dim(&self) -> Option<usize> {
        match &self.kind {
            PenaltyKind::Lasso | PenaltyKind::Linf | PenaltyKind::SphereHinge => None,
            PenaltyKind::GeneralLasso { analysis } | PenaltyKind::GeneralGroupLasso { analysis, .. } => {
                Some(analysis.cols())
            }
            PenaltyKind::GroupLasso { blocks } => Some(blocks.dim()),
            PenaltyKind::Nuclear { rows, cols } => Some(rows * cols),
        }
    }

    pub fn check_dim(&self, p: usize) -> Result<(), PenaltyError> {
        match self.fixed_dim() {
            Some(expected) if expected != p => Err(PenaltyError::DimensionMismatch { expected, found: p }),
            _ => Ok(()),
        }
    }

    pub fn is_polyhedral(&self) -> bool {
        matches!(
            self.kind,
            PenaltyKind::Lasso | PenaltyKind::GeneralLasso { .. } | PenaltyKind::Linf
        )
    }

    pub fn is_analysis(&self) -> bool {
        matches!(
            self.kind,
            PenaltyKind::GeneralLasso { .. } | PenaltyKind::GeneralGroupLasso { .. }
        )
    }

    /// Analysis operator and coefficient blocks of the group family
    /// (Lasso, general Lasso, group Lasso, general group Lasso).
    pub(crate) fn group_parts(&self, p: usize) -> Option<(Option<LinearMap>, Vec<Vec<usize>>)> {
        match &self.kind {
            PenaltyKind::Lasso => Some((None, Blocks::singletons(p).groups)),
            PenaltyKind::GeneralLasso { analysis } => {
                Some((Some(analysis.clone()), Blocks::singletons(analysis.rows()).groups))
            }
            PenaltyKind::GroupLasso { blocks } => Some((None, blocks.groups.clone())),
            PenaltyKind::GeneralGroupLasso { analysis, blocks } => {
                Some((Some(analysis.clone()), blocks.groups.clone()))
            }
            _ => None,
        }
    }

    /// `λ J(x)`.
    pub fn value(&self, x: &Vector) -> Result<f64, PenaltyError> {
        self.check_dim(x.len())?;
        let base = match &self.kind {
            PenaltyKind::Linf => x.amax(),
            PenaltyKind::Nuclear { rows, cols } => vec_to_mat(x, *rows, *cols).singular_values().sum(),
            PenaltyKind::SphereHinge => (x.norm() - 1.0).max(0.0),
            _ => {
                let (analysis, blocks) = self.group_parts(x.len()).expect("group kind");
                let u = match &analysis {
                    Some(a) => a.apply(x)?,
                    None => x.clone(),
                };
                group::block_norms(&u, &blocks).iter().sum()
            }
        };
        Ok(self.lambda * base)
    }

    /// Proximity operator: the minimizer of `½‖u − v‖² + step·λ·J(u)`.
    ///
    /// Analysis kinds are evaluated by an inner dual projected-gradient
    /// loop and are therefore accurate only to about 1e-10.
    pub fn prox(&self, v: &Vector, step: f64) -> Result<Vector, PenaltyError> {
        if !(step > 0.0) {
            return Err(PenaltyError::InvalidStep(step));
        }
        self.check_dim(v.len())?;
        let t = step * self.lambda;
        if t == 0.0 {
            return Ok(v.clone());
        }
        Ok(match &self.kind {
            PenaltyKind::Lasso => group::soft_threshold(v, t),
            PenaltyKind::GroupLasso { blocks } => group::block_soft_threshold(v, &blocks.groups, t),
            PenaltyKind::GeneralLasso { analysis } => {
                group::analysis_prox(analysis, &Blocks::singletons(analysis.rows()).groups, v, t)
            }
            PenaltyKind::GeneralGroupLasso { analysis, blocks } => {
                group::analysis_prox(analysis, &blocks.groups, v, t)
            }
            PenaltyKind::Linf => linf::prox(v, t),
            PenaltyKind::Nuclear { rows, cols } => nuclear::prox(v, *rows, *cols, t),
            PenaltyKind::SphereHinge => sphere::prox(v, t),
        })
    }

    /// Identification tolerance used by [`Penalty::identify`] at `x`.
    pub fn default_tol(&self, x: &Vector) -> f64 {
        match &self.kind {
            PenaltyKind::Linf => IDENTIFY_RTOL * x.amax(),
            PenaltyKind::Nuclear { rows, cols } => {
                let s = vec_to_mat(x, *rows, *cols).singular_values();
                IDENTIFY_RTOL * s.max()
            }
            PenaltyKind::SphereHinge => IDENTIFY_RTOL,
            _ => {
                let (analysis, blocks) = self.group_parts(x.len()).expect("group kind");
                let u = match &analysis {
                    Some(a) => a.apply_unchecked(x),
                    None => x.clone(),
                };
                IDENTIFY_RTOL * group::block_norms(&u, &blocks).iter().fold(0.0f64, |a, &b| a.max(b))
            }
        }
    }

    /// Active manifold at `x` with the default relative tolerance.
    pub fn identify(&self, x: &Vector) -> Result<ActiveModel, PenaltyError> {
        self.check_dim(x.len())?;
        self.identify_with_tol(x, self.default_tol(x))
    }

    /// Active manifold at `x`; entries, block norms or singular values of
    /// magnitude at most `tol` are treated as zero. For the sphere hinge,
    /// `|‖x‖ − 1| ≤ tol` places `x` on the sphere.
    pub fn identify_with_tol(&self, x: &Vector, tol: f64) -> Result<ActiveModel, PenaltyError> {
        self.check_dim(x.len())?;
        if self.lambda == 0.0 {
            return Ok(ActiveModel::full(0.0, x.clone()));
        }
        Ok(match &self.kind {
            PenaltyKind::Linf => linf::identify(self.lambda, x, tol),
            PenaltyKind::Nuclear { rows, cols } => nuclear::identify(self.lambda, x, *rows, *cols, tol),
            PenaltyKind::SphereHinge => sphere::identify(self.lambda, x, tol),
            _ => {
                let (analysis, blocks) = self.group_parts(x.len()).expect("group kind");
                let singletons = matches!(self.kind, PenaltyKind::Lasso | PenaltyKind::GeneralLasso { .. });
                group::identify(self.lambda, analysis, blocks, singletons, x, tol)?
            }
        })
    }

    /// Model at `x` for the group family with an explicit block support.
    pub(crate) fn identify_mask(&self, x: &Vector, mask: &[bool]) -> Result<ActiveModel, PenaltyError> {
        self.check_dim(x.len())?;
        if self.lambda == 0.0 {
            return Ok(ActiveModel::full(0.0, x.clone()));
        }
        let (analysis, blocks) = self.group_parts(x.len()).expect("group kind");
        let singletons = matches!(self.kind, PenaltyKind::Lasso | PenaltyKind::GeneralLasso { .. });
        group::identify_mask(self.lambda, analysis, blocks, singletons, x, mask)
    }

    /// Model at `x` on the same manifold as `template`, or `None` when `x`
    /// is not on that manifold.
    pub(crate) fn identify_like(&self, template: &ActiveModel, x: &Vector) -> Option<ActiveModel> {
        let lambda = self.lambda;
        match &template.structure {
            Structure::Full => Some(ActiveModel::full(lambda, x.clone())),
            Structure::Group(g) => group::rebuild(template, g, x),
            Structure::Linf { saturated, signs } => {
                if signs.is_empty() {
                    return (x.amax() == 0.0).then(|| linf::identify(lambda, x, 0.0));
                }
                let c = saturated.iter().zip(signs).map(|(&i, &s)| s * x[i]).sum::<f64>() / signs.len() as f64;
                let mut in_set = vec![false; x.len()];
                for &i in saturated {
                    in_set[i] = true;
                }
                let free_max = (0..x.len()).filter(|&i| !in_set[i]).map(|i| x[i].abs()).fold(0.0, f64::max);
                (c > 0.0 && c > free_max).then(|| linf::identify_set(lambda, x, saturated.clone(), signs.clone()))
            }
            Structure::Nuclear { rows, cols, s, .. } => {
                let r = s.len();
                let sv = nuclear::sorted_svd(&vec_to_mat(x, *rows, *cols)).1;
                if r > 0 && !(sv[r - 1] > 1e-12 * sv[0]) {
                    return None;
                }
                let tol = self.default_tol(x);
                Some(nuclear::identify_rank(lambda, x, *rows, *cols, r, tol))
            }
            Structure::Sphere { region } => {
                let n = x.norm();
                let ok = match region {
                    SphereRegion::On => true,
                    SphereRegion::Inside => n < 1.0,
                    SphereRegion::Outside => n > 1.0,
                };
                ok.then(|| sphere::identify_region(lambda, x, *region))
            }
        }
    }

    /// Nearest point of the manifold of `template` to `x` (a retraction).
    pub(crate) fn retract(&self, template: &ActiveModel, x: &Vector) -> Vector {
        match &template.structure {
            Structure::Full => x.clone(),
            Structure::Group(_) | Structure::Linf { .. } => template.project(x),
            Structure::Nuclear { rows, cols, s, .. } => {
                let (u, sv, v) = nuclear::sorted_svd(&vec_to_mat(x, *rows, *cols));
                let mut out = Matrix::zeros(*rows, *cols);
                for i in 0..s.len() {
                    out += u.column(i) * v.column(i).transpose() * sv[i];
                }
                mat_to_vec(&out)
            }
            Structure::Sphere { region } => match region {
                SphereRegion::On => {
                    let n = x.norm();
                    if n > 0.0 {
                        x / n
                    } else {
                        x.clone()
                    }
                }
                _ => x.clone(),
            },
        }
    }

    /// Certificate of `g = −∇F(x)` against `∂(λJ)(x)` on the manifold `model`.
    pub fn certificate(&self, model: &ActiveModel, g: &Vector) -> Certificate {
        let lambda = self.lambda;
        let mut cert = match &model.structure {
            Structure::Full => Certificate {
                margin: 1.0,
                kkt: g.norm(),
            },
            Structure::Group(data) => group::certificate(lambda, model, data, g),
            Structure::Linf { saturated, signs } => linf::certificate(lambda, saturated, signs, g),
            Structure::Nuclear { rows, cols, .. } => nuclear::certificate(lambda, model, *rows, *cols, g),
            Structure::Sphere { region } => sphere::certificate(lambda, model, *region, g),
        };
        if self.lambda == 0.0 && cert.kkt > MISMATCH_RTOL {
            cert.margin = cert.margin.min(-cert.kkt);
        }
        cert
    }

    /// Certificate margin of `g` at `x` (identification with the default
    /// tolerance).
    pub fn certificate_margin(&self, x: &Vector, g: &Vector) -> Result<f64, PenaltyError> {
        let model = self.identify(x)?;
        Ok(self.certificate(&model, g).margin)
    }
}

/// Forces the margin negative when the on-manifold mismatch is too large.
pub(crate) fn finish_margin(margin: f64, mismatch: f64, lambda: f64) -> f64 {
    let tol = MISMATCH_RTOL * lambda.max(1.0);
    if mismatch > tol {
        margin.min(-mismatch / lambda.max(1.0))
    } else {
        margin
    }
}
