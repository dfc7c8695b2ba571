//! Lasso, general Lasso, group Lasso and general group Lasso, handled as
//! `Σ_b ‖(A x)_b‖₂` with `A` either the identity or an analysis operator.

use super::{finish_margin, ActiveModel, Certificate, GroupData, ManifoldId, PenaltyError, Structure};
use crate::linalg::{project_l1_ball, RankFactor};
use crate::linop::LinearMap;
use crate::{Matrix, Vector};

const KERNEL_RTOL: f64 = 1e-10;

pub(crate) fn block_norms(u: &Vector, blocks: &[Vec<usize>]) -> Vec<f64> {
    blocks
        .iter()
        .map(|b| b.iter().map(|&i| u[i] * u[i]).sum::<f64>().sqrt())
        .collect()
}

pub(crate) fn soft_threshold(v: &Vector, t: f64) -> Vector {
    v.map(|x| x.signum() * (x.abs() - t).max(0.0))
}

pub(crate) fn block_soft_threshold(v: &Vector, blocks: &[Vec<usize>], t: f64) -> Vector {
    let mut out = v.clone();
    for (b, n) in blocks.iter().zip(block_norms(v, blocks)) {
        let f = if n > t { 1.0 - t / n } else { 0.0 };
        for &i in b {
            out[i] *= f;
        }
    }
    out
}

/// Projection of `w` onto `{‖w_b‖ ≤ t for every block}`.
pub(crate) fn clip_blocks(w: &Vector, blocks: &[Vec<usize>], t: f64) -> Vector {
    let mut out = w.clone();
    for (b, n) in blocks.iter().zip(block_norms(w, blocks)) {
        if n > t {
            for &i in b {
                out[i] *= t / n;
            }
        }
    }
    out
}

/// `prox_{t‖A·‖₁,₂}(v) = v − A* w`, with `w` solving the dual problem
/// `min ½‖v − A* w‖²` over `‖w_b‖ ≤ t`, by accelerated projected gradient.
pub(crate) fn analysis_prox(a: &LinearMap, blocks: &[Vec<usize>], v: &Vector, t: f64) -> Vector {
    let lip = a.norm_estimate(100).powi(2) * 1.01 + 1e-300;
    let mut w = Vector::zeros(a.rows());
    let mut z = w.clone();
    let mut theta = 1.0f64;
    for _ in 0..20_000 {
        let grad = a.apply_unchecked(&(a.adjoint_unchecked(&z) - v));
        let w_next = clip_blocks(&(&z - grad / lip), blocks, t);
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let step = &w_next - &w;
        z = &w_next + &step * ((theta - 1.0) / theta_next);
        let done = step.norm() <= 1e-13 * (1.0 + w_next.norm());
        w = w_next;
        theta = theta_next;
        if done {
            break;
        }
    }
    v - a.adjoint_unchecked(&w)
}

pub(crate) fn identify(
    lambda: f64,
    analysis: Option<LinearMap>,
    blocks: Vec<Vec<usize>>,
    singletons: bool,
    x: &Vector,
    tol: f64,
) -> Result<ActiveModel, PenaltyError> {
    let coeffs = match &analysis {
        Some(a) => a.apply(x)?,
        None => x.clone(),
    };
    let norms = block_norms(&coeffs, &blocks);
    let mask: Vec<bool> = norms.iter().map(|&n| n > tol).collect();
    build(lambda, analysis, blocks, singletons, x, coeffs, &mask, None)
}

/// Model at `x` on the manifold of `template`, reusing its tangent basis.
/// Returns `None` when an active block vanishes at `x`.
pub(crate) fn rebuild(template: &ActiveModel, g: &GroupData, x: &Vector) -> Option<ActiveModel> {
    let coeffs = match &g.analysis {
        Some(a) => a.apply_unchecked(x),
        None => x.clone(),
    };
    let norms = block_norms(&coeffs, &g.blocks);
    let scale = norms.iter().fold(0.0f64, |a, &b| a.max(b));
    if g.active.iter().any(|&b| norms[b] <= 1e-12 * scale || norms[b] == 0.0) {
        return None;
    }
    let mut mask = vec![false; g.blocks.len()];
    for &b in &g.active {
        mask[b] = true;
    }
    let singletons = matches!(template.manifold_id, ManifoldId::Support(_));
    build(
        template.lambda,
        g.analysis.clone(),
        g.blocks.clone(),
        singletons,
        x,
        coeffs,
        &mask,
        Some((&template.basis, g.inactive_factor.as_ref())),
    )
    .ok()
}

/// Model at `x` with the block support given by `mask`.
pub(crate) fn identify_mask(
    lambda: f64,
    analysis: Option<LinearMap>,
    blocks: Vec<Vec<usize>>,
    singletons: bool,
    x: &Vector,
    mask: &[bool],
) -> Result<ActiveModel, PenaltyError> {
    let coeffs = match &analysis {
        Some(a) => a.apply(x)?,
        None => x.clone(),
    };
    build(lambda, analysis, blocks, singletons, x, coeffs, mask, None)
}

#[allow(clippy::too_many_arguments)]
fn build(
    lambda: f64,
    analysis: Option<LinearMap>,
    blocks: Vec<Vec<usize>>,
    singletons: bool,
    x: &Vector,
    coeffs: Vector,
    mask: &[bool],
    reuse: Option<(&Matrix, Option<&RankFactor>)>,
) -> Result<ActiveModel, PenaltyError> {
    let p = x.len();
    let norms = block_norms(&coeffs, &blocks);
    let active: Vec<usize> = (0..blocks.len()).filter(|&b| mask[b]).collect();
    let mut inactive_rows: Vec<usize> = blocks
        .iter()
        .enumerate()
        .filter(|(b, _)| !mask[*b])
        .flat_map(|(_, rows)| rows.iter().copied())
        .collect();
    inactive_rows.sort_unstable();

    let mut normals = Vector::zeros(coeffs.len());
    for &b in &active {
        if norms[b] > 0.0 {
            for &i in &blocks[b] {
                normals[i] = coeffs[i] / norms[b];
            }
        }
    }

    let (basis, inactive_factor) = match (reuse, &analysis) {
        (Some((basis, factor)), _) => (basis.clone(), factor.cloned()),
        (None, None) => {
            let mut rows: Vec<usize> = active.iter().flat_map(|&b| blocks[b].iter().copied()).collect();
            rows.sort_unstable();
            let mut basis = Matrix::zeros(p, rows.len());
            for (c, &i) in rows.iter().enumerate() {
                basis[(i, c)] = 1.0;
            }
            (basis, None)
        }
        (None, Some(a)) => {
            let dense = a.materialize()?;
            let sub = dense.select_rows(inactive_rows.iter());
            let factor = RankFactor::new(&sub, KERNEL_RTOL);
            (factor.kernel.clone(), Some(factor))
        }
    };

    let raw_e = match &analysis {
        Some(a) => a.adjoint_unchecked(&normals) * lambda,
        None => &normals * lambda,
    };
    let e_x = &basis * basis.tr_mul(&raw_e);

    let data = GroupData {
        analysis,
        blocks,
        coeffs,
        active,
        inactive_rows,
        inactive_factor,
    };
    let k = basis.ncols();
    let mut hessian = Matrix::zeros(k, k);
    if !singletons {
        for j in 0..k {
            let xi = basis.column(j).into_owned();
            let q = delta_q_full(lambda, &data, &xi);
            hessian.set_column(j, &basis.tr_mul(&q));
        }
    }
    let id = if singletons {
        ManifoldId::Support(data.active.clone())
    } else {
        ManifoldId::BlockSupport(data.active.clone())
    };
    Ok(ActiveModel::new(lambda, x.clone(), id, basis, e_x, hessian, Structure::Group(data)))
}

/// `A* (δQ) A v`, where `δQ` acts on each active block `b` as
/// `λ (I − n_b n_bᵀ) / ‖u_b‖`.
pub(crate) fn delta_q_full(lambda: f64, g: &GroupData, v: &Vector) -> Vector {
    let w = match &g.analysis {
        Some(a) => a.apply_unchecked(v),
        None => v.clone(),
    };
    let mut out = Vector::zeros(w.len());
    for &b in &g.active {
        let rows = &g.blocks[b];
        if rows.len() < 2 {
            continue;
        }
        let n2: f64 = rows.iter().map(|&i| g.coeffs[i] * g.coeffs[i]).sum();
        let n = n2.sqrt();
        let ip: f64 = rows.iter().map(|&i| g.coeffs[i] * w[i]).sum();
        for &i in rows {
            out[i] = lambda * (w[i] - ip * g.coeffs[i] / n2) / n;
        }
    }
    match &g.analysis {
        Some(a) => a.adjoint_unchecked(&out),
        None => out,
    }
}

pub(crate) fn certificate(lambda: f64, model: &ActiveModel, g: &GroupData, grad: &Vector) -> Certificate {
    match (&g.analysis, &g.inactive_factor) {
        (Some(a), Some(factor)) => analysis_certificate(lambda, model, g, a, factor, grad),
        _ => synthesis_certificate(lambda, g, grad),
    }
}

fn synthesis_certificate(lambda: f64, g: &GroupData, grad: &Vector) -> Certificate {
    let mut mismatch2 = 0.0;
    for &b in &g.active {
        let rows = &g.blocks[b];
        let n: f64 = rows.iter().map(|&i| g.coeffs[i] * g.coeffs[i]).sum::<f64>().sqrt();
        for &i in rows {
            let d = grad[i] - lambda * g.coeffs[i] / n;
            mismatch2 += d * d;
        }
    }
    let mut is_active = vec![false; g.blocks.len()];
    for &b in &g.active {
        is_active[b] = true;
    }
    let mut worst = 0.0f64;
    let mut excess2 = 0.0;
    for (b, rows) in g.blocks.iter().enumerate() {
        if is_active[b] {
            continue;
        }
        let n: f64 = rows.iter().map(|&i| grad[i] * grad[i]).sum::<f64>().sqrt();
        worst = worst.max(n);
        excess2 += (n - lambda).max(0.0).powi(2);
    }
    let mismatch = mismatch2.sqrt();
    let margin = if lambda > 0.0 { 1.0 - worst / lambda } else { 1.0 };
    Certificate {
        margin: finish_margin(margin, mismatch, lambda),
        kkt: (mismatch2 + excess2).sqrt(),
    }
}

/// Dual certificate for analysis kinds. The residual `r = g − λ A_Λ* n_Λ`
/// must be written as `A_{Λᶜ}* v`; the tangent part of `r` is the
/// on-manifold mismatch and `v` is chosen to minimize `max_b ‖v_b‖` by ADMM
/// on the affine solution set.
fn analysis_certificate(
    lambda: f64,
    model: &ActiveModel,
    g: &GroupData,
    a: &LinearMap,
    factor: &RankFactor,
    grad: &Vector,
) -> Certificate {
    let mut normals = Vector::zeros(g.coeffs.len());
    for &b in &g.active {
        let rows = &g.blocks[b];
        let n: f64 = rows.iter().map(|&i| g.coeffs[i] * g.coeffs[i]).sum::<f64>().sqrt();
        for &i in rows {
            normals[i] = g.coeffs[i] / n;
        }
    }
    let r = grad - a.adjoint_unchecked(&normals) * lambda;
    let r_t = model.project(&r);
    let mismatch = r_t.norm();
    if g.inactive_rows.is_empty() || lambda == 0.0 {
        return Certificate {
            margin: finish_margin(1.0, mismatch, lambda),
            kkt: r.norm().max(mismatch),
        };
    }
    let r_s = &r - &r_t;

    // Local block structure on the inactive rows.
    let mut pos = vec![usize::MAX; g.coeffs.len()];
    for (k, &i) in g.inactive_rows.iter().enumerate() {
        pos[i] = k;
    }
    let mut is_active = vec![false; g.blocks.len()];
    for &b in &g.active {
        is_active[b] = true;
    }
    let local: Vec<Vec<usize>> = g
        .blocks
        .iter()
        .enumerate()
        .filter(|(b, _)| !is_active[*b])
        .map(|(_, rows)| rows.iter().map(|&i| pos[i]).collect())
        .collect();

    // A_{Λᶜ} = U diag(s) Vᵀ, so A_{Λᶜ}* v = r_s has the minimum-norm
    // solution U diag(1/s) Vᵀ r_s and the affine solution set
    // v0 + (span U)^⊥.
    let mut coef = factor.v.tr_mul(&r_s);
    for (c, s) in coef.iter_mut().zip(&factor.s) {
        *c /= s;
    }
    let v0 = &factor.u * &coef;
    let project = |w: &Vector| -> Vector { &v0 + w - &factor.u * factor.u.tr_mul(w) };

    let scale = lambda;
    let mut v = v0.clone();
    let mut d = Vector::zeros(v.len());
    let rho = 1.0 / scale;
    let mut best = max_block_norm(&v, &local);
    let mut best_v = v.clone();
    for it in 0..4000 {
        // prox of (1/ρ)‖·‖_{∞,2} via the Moreau decomposition.
        let a_pt = &v + &d;
        let w = &a_pt - linf2_ball_projection(&a_pt, &local, 1.0 / rho);
        v = project(&(&w - &d));
        d += &v - &w;
        let current = max_block_norm(&v, &local);
        if current < best {
            best = current;
            best_v = v.clone();
        }
        if it % 25 == 0 && (&v - &w).norm() <= 1e-11 * scale * (v.len() as f64).sqrt() && best < scale {
            break;
        }
    }
    let clipped = clip_blocks(&best_v, &local, lambda);
    let mut diff = Vector::zeros(g.coeffs.len());
    for (k, &i) in g.inactive_rows.iter().enumerate() {
        diff[i] = best_v[k] - clipped[k];
    }
    let excess = a.adjoint_unchecked(&diff).norm();
    Certificate {
        margin: finish_margin(1.0 - best / lambda, mismatch, lambda),
        kkt: (mismatch * mismatch + excess * excess).sqrt(),
    }
}

fn max_block_norm(v: &Vector, blocks: &[Vec<usize>]) -> f64 {
    block_norms(v, blocks).into_iter().fold(0.0, f64::max)
}

/// Projection onto the ℓ₁,₂ ball `{Σ_b ‖w_b‖ ≤ radius}`.
fn linf2_ball_projection(w: &Vector, blocks: &[Vec<usize>], radius: f64) -> Vector {
    let norms = block_norms(w, blocks);
    let target = project_l1_ball(&norms, radius);
    let mut out = w.clone();
    for ((b, n), t) in blocks.iter().zip(norms).zip(target) {
        let f = if n > 0.0 { t / n } else { 0.0 };
        for &i in b {
            out[i] *= f;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::{Blocks, Penalty, PenaltyKind};
    use crate::seeds;

    #[test]
    fn analysis_prox_with_identity_matches_soft_threshold() {
        let mut rng = seeds::rng(4, &[]);
        let v = seeds::normal_vector(&mut rng, 6);
        let blocks = Blocks::singletons(6);
        let out = analysis_prox(&LinearMap::identity(6), blocks.groups(), &v, 0.5);
        assert!((out - soft_threshold(&v, 0.5)).norm() < 1e-10);
    }

    #[test]
    fn tv_tangent_space_is_kernel_of_inactive_rows() {
        let d = LinearMap::grad2d(3, 3);
        let j = Penalty::new(
            PenaltyKind::GeneralGroupLasso { analysis: d.clone(), blocks: Blocks::uniform(9, 2).unwrap() },
            1.0,
        )
        .unwrap();
        let mut x = Vector::zeros(9);
        x[4] = 1.0;
        x[5] = 1.0;
        let m = j.identify(&x).unwrap();
        let u = d.apply(&m.basis.column(0).into_owned()).unwrap();
        if let Structure::Group(g) = &m.structure {
            for &i in &g.inactive_rows {
                assert!(u[i].abs() < 1e-10);
            }
        }
        let p = m.projector();
        assert!((&p * &p - &p).norm() < 1e-10);
        assert!((p.trace() - m.tangent_dim as f64).abs() < 1e-8);
    }

    #[test]
    fn tv_hessian_matches_composed_formula() {
        let d = LinearMap::grad2d(4, 4);
        let blocks = Blocks::uniform(16, 2).unwrap();
        let lambda = 0.8;
        let j = Penalty::new(PenaltyKind::GeneralGroupLasso { analysis: d.clone(), blocks: blocks.clone() }, lambda)
            .unwrap();
        let x = Vector::from_iterator(16, (0..16).map(|k| if k % 4 < 2 { 1.0 } else { 3.0 } + (k / 8) as f64));
        let m = j.identify(&x).unwrap();
        let pt = m.projector();
        let dm = d.materialize().unwrap();
        let u = &dm * &x;
        let norm_grad = |z: &Vector| -> Vector {
            let w = &dm * z;
            let mut out = Vector::zeros(w.len());
            for b in blocks.groups() {
                let n = b.iter().map(|&i| u[i] * u[i]).sum::<f64>().sqrt();
                if n > 1e-9 {
                    let nb = b.iter().map(|&i| w[i] * w[i]).sum::<f64>().sqrt();
                    for &i in b {
                        out[i] = w[i] / nb;
                    }
                }
            }
            dm.transpose() * out * lambda
        };
        let mut rng = seeds::rng(8, &[]);
        for _ in 0..5 {
            let xi = &pt * seeds::normal_vector(&mut rng, 16);
            let h = 1e-5;
            let fd = &pt * (norm_grad(&(&x + &xi * h)) - norm_grad(&(&x - &xi * h))) / (2.0 * h);
            let q = m.hessian_apply(&xi);
            assert!((&q - &fd).norm() <= 1e-6 * (1.0 + q.norm()), "{} vs {}", q, fd);
        }
    }

    #[test]
    fn analysis_margin_on_denoising_instance() {
        let d = LinearMap::grad2d(1, 4);
        let j = Penalty::new(PenaltyKind::GeneralLasso { analysis: d }, 0.5).unwrap();
        // piecewise constant x with one jump; the vertical differences of a
        // one-row image vanish identically
        let x = Vector::from_vec(vec![1.0, 1.0, 2.0, 2.0]);
        let m = j.identify(&x).unwrap();
        assert_eq!(m.tangent_dim, 2);
        let e = m.e_x.clone();
        let margin = j.certificate(&m, &e).margin;
        assert!(margin > 0.0 && margin <= 1.0, "{margin}");
    }
}
