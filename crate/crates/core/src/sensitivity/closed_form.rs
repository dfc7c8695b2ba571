//! Closed-form divergences, written from the penalty data rather than from
//! the tangent system used by the generic estimators.

use super::SensitivityError;
use crate::linalg::{RankFactor, SymPinv};
use crate::linop::LinearMap;
use crate::penalty::{ActiveModel, GroupData, ManifoldId, Penalty, PenaltyKind, SphereRegion, Structure};
use crate::solver::saddle::PINV_RTOL;
use crate::{Matrix, Vector};

/// `tr(A (AᵀA + M)⁺ Aᵀ)`.
fn trace_formula(a: &Matrix, m: &Matrix) -> f64 {
    if a.ncols() == 0 {
        return 0.0;
    }
    let g = a.tr_mul(a);
    let h = SymPinv::new(&(&g + m), PINV_RTOL).matrix();
    (h * g).trace()
}

/// `δ ∘ Q` on the coefficient space: `λ (I − n nᵀ)/‖u_b‖` on each active
/// block of size at least two, zero elsewhere.
fn delta_q(lambda: f64, coeffs: &Vector, blocks: &[Vec<usize>], active: &[usize]) -> Matrix {
    let m = coeffs.len();
    let mut out = Matrix::zeros(m, m);
    for &b in active {
        let rows = &blocks[b];
        if rows.len() < 2 {
            continue;
        }
        let norm = rows.iter().map(|&i| coeffs[i] * coeffs[i]).sum::<f64>().sqrt();
        for &i in rows {
            for &k in rows {
                let id = if i == k { 1.0 } else { 0.0 };
                out[(i, k)] = lambda * (id - coeffs[i] * coeffs[k] / (norm * norm)) / norm;
            }
        }
    }
    out
}

fn group_divergence(x: &LinearMap, lambda: f64, g: &GroupData) -> Result<f64, SensitivityError> {
    let p = x.cols();
    match &g.analysis {
        None => {
            let mut cols: Vec<usize> = g.active.iter().flat_map(|&b| g.blocks[b].iter().copied()).collect();
            cols.sort_unstable();
            let mut sel = Matrix::zeros(p, cols.len());
            for (c, &i) in cols.iter().enumerate() {
                sel[(i, c)] = 1.0;
            }
            let xl = x.apply_matrix(&sel)?;
            let dq = delta_q(lambda, &g.coeffs, &g.blocks, &g.active).select_rows(cols.iter()).select_columns(cols.iter());
            Ok(trace_formula(&xl, &dq))
        }
        Some(d) => {
            let dm = d.materialize()?;
            let basis = RankFactor::new(&dm.select_rows(g.inactive_rows.iter()), 1e-10).kernel;
            let xt = x.apply_matrix(&basis)?;
            let db = &dm * &basis;
            let dq = delta_q(lambda, &g.coeffs, &g.blocks, &g.active);
            Ok(trace_formula(&xt, &(db.transpose() * dq * &db)))
        }
    }
}

/// Divergence from the closed-form expression of the penalty kind, or
/// `None` when no closed form is implemented (nuclear norm).
///
/// - Lasso: `|supp x̂|`; general Lasso: `dim Ker(D*_{Λᶜ})`.
/// - ℓ∞: `p − |I| + 1` (and `0` at the origin).
/// - (general) group Lasso: `tr(X_T (X_T* X_T + P_T D (δ∘Q) D* P_T)⁺ X_T*)`.
/// - sphere hinge on the sphere: `tr(X_T (X_T* X_T + ⟨X x̂, y − X x̂⟩ P_T)⁺ X_T*)`.
pub fn closed_form_divergence(x: &LinearMap, j: &Penalty, model: &ActiveModel) -> Result<Option<f64>, SensitivityError> {
    let p = model.dim;
    let value = match (&j.kind, &model.structure) {
        (_, Structure::Full) => {
            let xm = x.materialize()?;
            Some(RankFactor::new(&xm, 1e-10).rank() as f64)
        }
        (PenaltyKind::Lasso, _) => match &model.manifold_id {
            ManifoldId::Support(s) => Some(s.len() as f64),
            _ => None,
        },
        (PenaltyKind::GeneralLasso { .. }, _) => Some(model.tangent_dim as f64),
        (PenaltyKind::Linf, _) => match &model.manifold_id {
            ManifoldId::Origin => Some(0.0),
            ManifoldId::Saturation { indices, .. } => Some((p - indices.len() + 1) as f64),
            _ => None,
        },
        (PenaltyKind::GroupLasso { .. } | PenaltyKind::GeneralGroupLasso { .. }, Structure::Group(g)) => {
            Some(group_divergence(x, j.lambda, g)?)
        }
        (PenaltyKind::SphereHinge, Structure::Sphere { region }) => {
            let xt = x.apply_matrix(&model.basis)?;
            let k = model.tangent_dim;
            let m = match region {
                SphereRegion::On => {
                    let normal = model
                        .loss_normal
                        .as_ref()
                        .ok_or_else(|| SensitivityError::InvalidMethod("model carries no loss gradient".into()))?;
                    let c = -model.point.dot(normal) / model.point.norm_squared();
                    Matrix::identity(k, k) * c
                }
                _ => model.hessian.clone(),
            };
            Some(trace_formula(&xt, &m))
        }
        _ => None,
    };
    Ok(value)
}

/// Divergence of the group Lasso with an orthonormal design,
/// `|Λ| − s Σ_{b active} (|b| − 1)/‖y_b‖`, where `Λ` is the union of the
/// active blocks. `scale = None` takes `s = 1`; `Some(λ)` takes `s = λ`,
/// which is the derivative of block soft thresholding at level `λ`.
pub fn orthonormal_group_dof(y: &Vector, blocks: &[Vec<usize>], active: &[usize], scale: Option<f64>) -> f64 {
    let s = scale.unwrap_or(1.0);
    active
        .iter()
        .map(|&b| {
            let size = blocks[b].len() as f64;
            let norm = blocks[b].iter().map(|&i| y[i] * y[i]).sum::<f64>().sqrt();
            size - s * (size - 1.0) / norm
        })
        .sum()
}
