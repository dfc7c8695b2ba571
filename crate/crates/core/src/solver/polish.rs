//! Newton iterations restricted to an identified manifold.

use super::saddle::TangentSystem;
use super::{with_gradient, LossModel};
use crate::linop::LinearMap;
use crate::penalty::{ActiveModel, GroupData, Penalty, Structure};
use crate::Vector;

const MAX_NEWTON: usize = 40;
const GRAD_RTOL: f64 = 1e-13;
/// Blocks reaching their minimum within this factor of the first one are
/// dropped together.
const DROP_WINDOW: f64 = 4.0;

fn phi(x: &LinearMap, loss: &LossModel, j: &Penalty, xv: &Vector) -> f64 {
    loss.value(&x.apply_unchecked(xv)) + j.value(xv).unwrap_or(f64::INFINITY)
}

/// Minimizes the objective over the manifold of `template`, starting from
/// the retraction of its point. Blocks driven through zero leave the
/// support. Returns `None` unless a stationary point is reached.
pub(crate) fn polish(x: &LinearMap, loss: &LossModel, j: &Penalty, template: ActiveModel) -> Option<ActiveModel> {
    let start = j.retract(&template, &template.point);
    let mut model = j.identify_like(&template, &start)?;
    let mut value = phi(x, loss, j, &model.point);
    let mut stationary = false;
    for _ in 0..MAX_NEWTON {
        let (m, grad) = with_gradient(x, loss, model);
        model = m;
        let rgrad = model.basis.tr_mul(&(&grad + &model.e_x));
        let scale = grad.norm() + model.e_x.norm() + 1.0;
        if rgrad.norm() <= GRAD_RTOL * scale {
            stationary = true;
            break;
        }
        let sys = TangentSystem::new(x, &model).ok()?;
        let step_coords = -sys.solve_coords(&rgrad);
        let slope = rgrad.dot(&step_coords);
        if !(slope < 0.0) {
            break;
        }
        let step = &model.basis * step_coords;
        match drop_crossing_blocks(j, &model, &step) {
            Crossing::Dropped(next) => {
                model = next;
                value = phi(x, loss, j, &model.point);
                continue;
            }
            Crossing::Failed => return None,
            Crossing::None => {}
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = j.retract(&model, &(&model.point + &step * t));
            if let Some(next) = j.identify_like(&model, &trial) {
                let v = phi(x, loss, j, &next.point);
                if v <= value + 1e-4 * t * slope + 1e-14 * value.abs() {
                    accepted = Some((next, v));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((next, v)) => {
                let stalled = (value - v).abs() <= 1e-16 * value.abs() && t == 1.0 && step.norm() <= 1e-14 * (1.0 + next.point.norm());
                model = next;
                value = v;
                if stalled {
                    stationary = true;
                    break;
                }
            }
            None => break,
        }
    }
    stationary.then_some(model)
}

/// Outcome of checking the Newton step against the active blocks.
enum Crossing {
    None,
    Dropped(ActiveModel),
    Failed,
}

/// When the full Newton step drives active blocks through zero, moves to the
/// first point along the step where one of them is smallest and removes the
/// blocks that reach their minimum soon after. The restricted objective has
/// no minimizer in that case.
fn drop_crossing_blocks(j: &Penalty, model: &ActiveModel, step: &Vector) -> Crossing {
    let Structure::Group(g) = &model.structure else {
        return Crossing::None;
    };
    let d = match &g.analysis {
        Some(a) => a.apply_unchecked(step),
        None => step.clone(),
    };
    let mut hits: Vec<(f64, usize)> = g
        .active
        .iter()
        .filter_map(|&b| {
            let rows = &g.blocks[b];
            let ud: f64 = rows.iter().map(|&i| g.coeffs[i] * d[i]).sum();
            let uu: f64 = rows.iter().map(|&i| g.coeffs[i] * g.coeffs[i]).sum();
            let dd: f64 = rows.iter().map(|&i| d[i] * d[i]).sum();
            (uu + ud <= 0.0 && dd > 0.0).then(|| (-ud / dd, b))
        })
        .collect();
    if hits.is_empty() {
        return Crossing::None;
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = hits[0].0;
    let point = &model.point + step * first.min(1.0);
    let near = hits.iter().take_while(|h| h.0 <= DROP_WINDOW * first).count();
    for count in [near, 1] {
        let dropped: Vec<usize> = hits[..count].iter().map(|h| h.1).collect();
        if let Some(m) = reduce(j, g, &point, &dropped) {
            return Crossing::Dropped(m);
        }
    }
    Crossing::Failed
}

fn reduce(j: &Penalty, g: &GroupData, point: &Vector, dropped: &[usize]) -> Option<ActiveModel> {
    let mut mask = vec![false; g.blocks.len()];
    for &b in &g.active {
        mask[b] = !dropped.contains(&b);
    }
    let mut point = point.clone();
    if g.analysis.is_none() {
        for &b in dropped {
            for &i in &g.blocks[b] {
                point[i] = 0.0;
            }
        }
    }
    let reduced = j.identify_mask(&point, &mask).ok()?;
    let point = j.retract(&reduced, &point);
    j.identify_like(&reduced, &point)
}
