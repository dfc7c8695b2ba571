//! Moves a minimizer along `Ker(X)`-directions of its manifold until the
//! restricted positive definiteness condition holds.

use super::{restricted_pd, SensitivityError, PD_RTOL};
use crate::linalg::RankFactor;
use crate::linop::LinearMap;
use crate::penalty::{ActiveModel, Penalty, PenaltyKind, Structure};
use crate::solver::{objective, LossModel, SolveResult};
use crate::{Matrix, Vector};

const KERNEL_RTOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct RepairStep {
    pub active_size: usize,
    pub tangent_dim: usize,
    pub objective: f64,
    /// Step length `t₀` taken from this point (zero for the final point).
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct RepairOutcome {
    pub result: SolveResult,
    /// One entry per visited minimizer, starting with the input.
    pub history: Vec<RepairStep>,
}

fn rebuild(x: &LinearMap, loss: &LossModel, j: &Penalty, model: ActiveModel, like: &SolveResult) -> SolveResult {
    let mut r = crate::solver::evaluate_model(x, loss, j, model, like.kkt_target);
    r.iterations = like.iterations;
    r
}

/// First kernel vector of `m`, if any.
fn kernel_direction(m: &Matrix) -> Option<Vector> {
    let f = RankFactor::new(m, KERNEL_RTOL);
    (f.kernel.ncols() > 0).then(|| f.kernel.column(0).into_owned())
}

/// Smallest positive root among `1 + t α_b = 0`, over both orientations of
/// the direction. Returns `(t, flip, blocks hitting zero)`.
fn group_step(alpha: &[(usize, f64)]) -> Option<(f64, bool, Vec<usize>)> {
    let scale = alpha.iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs()));
    let cut = 1e-9 * scale;
    for flip in [false, true] {
        let sgn = if flip { -1.0 } else { 1.0 };
        let t = alpha
            .iter()
            .filter(|&&(_, a)| sgn * a < -cut)
            .map(|&(_, a)| -1.0 / (sgn * a))
            .fold(f64::INFINITY, f64::min);
        if t.is_finite() {
            let hit = alpha
                .iter()
                .filter(|&&(_, a)| sgn * a < -cut && (-1.0 / (sgn * a) - t).abs() <= 1e-9 * t)
                .map(|&(b, _)| b)
                .collect();
            return Some((t, flip, hit));
        }
    }
    None
}

/// One repair step for the group family; `None` when no kernel direction
/// exists.
fn group_repair(x: &LinearMap, j: &Penalty, model: &ActiveModel) -> Result<Option<(ActiveModel, f64)>, SensitivityError> {
    let Structure::Group(g) = &model.structure else {
        unreachable!("group structure expected");
    };
    let basis = &model.basis;
    let xb = x.apply_matrix(basis)?;
    let ab = match &g.analysis {
        Some(a) => a.apply_matrix(basis)?,
        None => basis.clone(),
    };
    let mut rows: Vec<Matrix> = vec![xb];
    for &b in &g.active {
        let idx = &g.blocks[b];
        if idx.len() < 2 {
            continue;
        }
        let u = Vector::from_iterator(idx.len(), idx.iter().map(|&i| g.coeffs[i]));
        let n = &u / u.norm();
        let proj = Matrix::identity(idx.len(), idx.len()) - &n * n.transpose();
        rows.push(proj * ab.select_rows(idx.iter()));
    }
    let total: usize = rows.iter().map(|m| m.nrows()).sum();
    let mut stacked = Matrix::zeros(total, basis.ncols());
    let mut r0 = 0;
    for m in &rows {
        stacked.view_mut((r0, 0), (m.nrows(), m.ncols())).copy_from(m);
        r0 += m.nrows();
    }
    let Some(c) = kernel_direction(&stacked) else {
        return Ok(None);
    };
    let dh = &ab * &c;
    let alpha: Vec<(usize, f64)> = g
        .active
        .iter()
        .map(|&b| {
            let idx = &g.blocks[b];
            let uu: f64 = idx.iter().map(|&i| g.coeffs[i] * g.coeffs[i]).sum();
            let ud: f64 = idx.iter().map(|&i| g.coeffs[i] * dh[i]).sum();
            (b, ud / uu)
        })
        .collect();
    let Some((t, flip, hit)) = group_step(&alpha) else {
        return Ok(None);
    };
    let h = basis * c * if flip { -1.0 } else { 1.0 };
    let mut next = &model.point + h * t;
    let mut mask = vec![false; g.blocks.len()];
    for &b in &g.active {
        mask[b] = !hit.contains(&b);
    }
    if g.analysis.is_none() {
        for &b in &hit {
            for &i in &g.blocks[b] {
                next[i] = 0.0;
            }
        }
    }
    Ok(Some((j.identify_mask(&next, &mask)?, t)))
}

/// One repair step for the ℓ∞ penalty: moves until a free coordinate joins
/// the saturation set (or the point reaches the origin).
fn linf_repair(x: &LinearMap, j: &Penalty, model: &ActiveModel) -> Result<Option<(ActiveModel, f64)>, SensitivityError> {
    let Structure::Linf { saturated, signs } = &model.structure else {
        unreachable!("linf structure expected");
    };
    if signs.is_empty() {
        return Ok(None);
    }
    let basis = &model.basis;
    let Some(c) = kernel_direction(&x.apply_matrix(basis)?) else {
        return Ok(None);
    };
    let p = model.dim;
    let xv = &model.point;
    let m = saturated.iter().zip(signs).map(|(&i, &s)| s * xv[i]).sum::<f64>() / signs.len() as f64;
    let mut in_set = vec![false; p];
    for &i in saturated {
        in_set[i] = true;
    }
    for flip in [false, true] {
        let h = basis * &c * if flip { -1.0 } else { 1.0 };
        let a = signs.iter().zip(saturated).map(|(&s, &i)| s * h[i]).sum::<f64>() / signs.len() as f64;
        let mut best = (f64::INFINITY, None);
        if a < 0.0 {
            best = (-m / a, None);
        }
        for i in (0..p).filter(|&i| !in_set[i]) {
            for s in [1.0, -1.0] {
                let den = s * h[i] - a;
                if den > 0.0 {
                    let t = (m - s * xv[i]) / den;
                    if t > 0.0 && t < best.0 {
                        best = (t, Some((i, s)));
                    }
                }
            }
        }
        let (t, joined) = best;
        if !t.is_finite() {
            continue;
        }
        let next = xv + &h * t;
        let new_max = m + a * t;
        let model = match joined {
            None => j.identify_with_tol(&Vector::zeros(p), 0.0)?,
            Some((i, s)) => {
                let mut sat = saturated.clone();
                let mut sg = signs.clone();
                sat.push(i);
                sg.push(s);
                let mut order: Vec<usize> = (0..sat.len()).collect();
                order.sort_by_key(|&k| sat[k]);
                let sat: Vec<usize> = order.iter().map(|&k| sat[k]).collect();
                let sg: Vec<f64> = order.iter().map(|&k| sg[k]).collect();
                let mut clean = next;
                for (&k, &s) in sat.iter().zip(&sg) {
                    clean[k] = s * new_max;
                }
                crate::penalty::identify_linf_set(j.lambda, &clean, sat, sg)
            }
        };
        return Ok(Some((model, t)));
    }
    Ok(None)
}

/// Replaces `result` by a minimizer with the same objective and a strictly
/// smaller active structure, repeatedly, until restricted positive
/// definiteness holds. A result that already satisfies it is returned
/// unchanged.
pub fn repair_solution(
    x: &LinearMap,
    loss: &LossModel,
    j: &Penalty,
    result: &SolveResult,
) -> Result<RepairOutcome, SensitivityError> {
    let supported = matches!(
        j.kind,
        PenaltyKind::Lasso
            | PenaltyKind::GeneralLasso { .. }
            | PenaltyKind::GroupLasso { .. }
            | PenaltyKind::GeneralGroupLasso { .. }
            | PenaltyKind::Linf
    );
    if !supported {
        return Err(SensitivityError::Unsupported(
            "solution repair is available for polyhedral and group penalties only".into(),
        ));
    }
    let mut current = result.clone();
    let step_of = |r: &SolveResult, t: f64| RepairStep {
        active_size: r.active.manifold_id.active_size(),
        tangent_dim: r.active.tangent_dim,
        objective: objective(x, loss, j, &r.x_hat).unwrap_or(f64::NAN),
        step: t,
    };
    let mut history = Vec::new();
    let budget = current.active.tangent_dim + 1;
    for _ in 0..=budget {
        if restricted_pd(x, &current.active, PD_RTOL)?.cinj || matches!(current.active.structure, Structure::Full) {
            history.push(step_of(&current, 0.0));
            return Ok(RepairOutcome { result: current, history });
        }
        let next = match &current.active.structure {
            Structure::Linf { .. } => linf_repair(x, j, &current.active)?,
            _ => group_repair(x, j, &current.active)?,
        };
        let Some((model, t)) = next else {
            return Err(SensitivityError::NoKernelDirection);
        };
        history.push(step_of(&current, t));
        current = rebuild(x, loss, j, model, result);
    }
    Err(SensitivityError::NoKernelDirection)
}
