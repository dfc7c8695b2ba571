use nalgebra::Cholesky;

use super::krylov::cg;
use super::polish::polish;
use super::{assess, LossModel, SolveOptions, SolveResult, SolverError};
use crate::linop::LinearMap;
use crate::penalty::{ActiveModel, Certificate, ManifoldId, Penalty, PenaltyKind};
use crate::{seeds, Matrix, Vector};

/// Largest dimension for which `I + c A*A` is factorized densely.
const DENSE_FACTOR_MAX: usize = 2000;

/// Solver for `(I + c A* A) w = v`.
enum Quadratic {
    Scalar(f64),
    Dense(Cholesky<f64, nalgebra::Dyn>),
    Iterative { a: LinearMap, c: f64 },
}

impl Quadratic {
    fn new(a: &LinearMap, c: f64) -> Self {
        if a.is_identity() {
            return Self::Scalar(1.0 / (1.0 + c));
        }
        let p = a.cols();
        if p <= DENSE_FACTOR_MAX && a.rows().saturating_mul(p) <= crate::linop::MATERIALIZE_CAP {
            if let Ok(m) = a.materialize() {
                let g = Matrix::identity(p, p) + m.tr_mul(&m) * c;
                if let Some(ch) = Cholesky::new(g) {
                    return Self::Dense(ch);
                }
            }
        }
        Self::Iterative { a: a.clone(), c }
    }

    fn solve(&self, v: &Vector) -> Vector {
        match self {
            Self::Scalar(s) => v * *s,
            Self::Dense(ch) => ch.solve(v),
            Self::Iterative { a, c } => {
                let op = |w: &Vector| w + a.adjoint_unchecked(&a.apply_unchecked(w)) * *c;
                cg(op, v, None, 1e-12, 10 * v.len().max(50)).x
            }
        }
    }
}

/// Consecutive identifications agree up to a few atoms, so a Newton polish
/// on the manifold is worth attempting.
fn settled(prev: Option<&ManifoldId>, cur: &ManifoldId) -> bool {
    let Some(prev) = prev else {
        return false;
    };
    match (prev, cur) {
        (ManifoldId::Support(a), ManifoldId::Support(b)) | (ManifoldId::BlockSupport(a), ManifoldId::BlockSupport(b)) => {
            let common = a.iter().filter(|i| b.binary_search(i).is_ok()).count();
            let diff = a.len() + b.len() - 2 * common;
            diff <= 1 + a.len().max(b.len()) / 50
        }
        _ => prev == cur,
    }
}

fn step(opts: &SolveOptions, lambda: f64, xty: &Vector) -> f64 {
    let rms = xty.norm() / (xty.len() as f64).sqrt().max(1.0);
    match opts.gamma_scale {
        Some(c) if lambda > 0.0 && rms > 0.0 => (c * rms / lambda).clamp(1e-6, 1e6),
        _ => opts.gamma,
    }
}

fn checkpoint(it: usize) -> bool {
    if it < 1000 {
        it % 20 == 0 && (it / 20).is_power_of_two()
    } else {
        it % 1000 == 0
    }
}

struct Candidate {
    model: ActiveModel,
    cert: Certificate,
    mu: Vector,
    objective: f64,
}

fn candidate(x: &LinearMap, loss: &LossModel, j: &Penalty, model: ActiveModel) -> Candidate {
    let (model, cert, mu, _) = assess(x, loss, j, model);
    let objective = loss.value(&mu) + j.value(&model.point).unwrap_or(f64::INFINITY);
    Candidate {
        model,
        cert,
        mu,
        objective,
    }
}

fn finish(c: Candidate, target: f64, iterations: usize, trace: Vec<(usize, f64)>, polished: bool) -> SolveResult {
    SolveResult {
        x_hat: c.model.point.clone(),
        mu_hat: c.mu,
        kkt_residual: c.cert.kkt,
        kkt_target: target,
        iterations,
        certificate_margin: c.cert.margin,
        converged: c.cert.kkt <= target,
        objective: c.objective,
        active: c.model,
        objective_trace: trace,
        polished,
    }
}

pub(crate) fn run(
    x: &LinearMap,
    loss: &LossModel,
    j: &Penalty,
    opts: &SolveOptions,
    init: Option<&Vector>,
) -> Result<SolveResult, SolverError> {
    let p = x.cols();
    let xty = x.adjoint_apply(&loss.y)?;
    let target = opts.kkt_tol * (1.0 + xty.norm());
    let gamma = step(opts, j.lambda, &xty);
    let start = match (init, opts.init_seed) {
        (Some(v), _) => v.clone(),
        (None, Some(seed)) => {
            let scale = xty.norm() / (p as f64).sqrt().max(1.0);
            seeds::normal_vector(&mut seeds::rng(seed, &[0x1417]), p) * scale
        }
        (None, None) => Vector::zeros(p),
    };
    match &j.kind {
        PenaltyKind::GeneralLasso { analysis } | PenaltyKind::GeneralGroupLasso { analysis, .. }
            if j.lambda > 0.0 =>
        {
            run_analysis(x, loss, j, opts, gamma, analysis, &xty, target, start)
        }
        _ => run_synthesis(x, loss, j, opts, gamma, &xty, target, start),
    }
}

fn try_polish(
    x: &LinearMap,
    loss: &LossModel,
    j: &Penalty,
    model: ActiveModel,
    target: f64,
) -> Option<Candidate> {
    let polished = polish(x, loss, j, model)?;
    let c = candidate(x, loss, j, polished);
    (c.cert.kkt <= target && c.cert.margin >= -1e-9).then_some(c)
}

#[allow(clippy::too_many_arguments)]
fn run_synthesis(
    x: &LinearMap,
    loss: &LossModel,
    j: &Penalty,
    opts: &SolveOptions,
    gamma: f64,
    xty: &Vector,
    target: f64,
    start: Vector,
) -> Result<SolveResult, SolverError> {
    let quad = Quadratic::new(x, gamma);
    let mut z = start;
    let mut xk = j.prox(&z, gamma)?;
    let mut trace = Vec::new();
    let mut prev: Option<ManifoldId> = None;
    for it in 1..=opts.iterations {
        xk = j.prox(&z, gamma)?;
        let w = quad.solve(&(&xk * 2.0 - &z + xty * gamma));
        z += &w - &xk;
        if opts.record_objective && it % 100 == 0 {
            trace.push((it, super::objective(x, loss, j, &xk)?));
        }
        if checkpoint(it) || it == opts.iterations {
            let model = j.identify(&xk)?;
            let last = it == opts.iterations;
            if opts.polish && (last || settled(prev.as_ref(), &model.manifold_id)) {
                if let Some(c) = try_polish(x, loss, j, model.clone(), target) {
                    return Ok(finish(c, target, it, trace, true));
                }
            }
            prev = Some(model.manifold_id.clone());
            let c = candidate(x, loss, j, model);
            if c.cert.kkt <= target {
                return Ok(finish(c, target, it, trace, false));
            }
        }
    }
    let model = j.identify(&xk)?;
    Ok(finish(candidate(x, loss, j, model), target, opts.iterations, trace, false))
}

/// Douglas-Rachford on the product space `(x, u)` with `u = A x`, splitting
/// `½‖X x − y‖² + λ‖u‖₁,₂` from the indicator of the graph of `A`.
#[allow(clippy::too_many_arguments)]
fn run_analysis(
    x: &LinearMap,
    loss: &LossModel,
    j: &Penalty,
    opts: &SolveOptions,
    gamma: f64,
    a: &LinearMap,
    xty: &Vector,
    target: f64,
    start: Vector,
) -> Result<SolveResult, SolverError> {
    let (_, blocks) = j.group_parts(x.cols()).expect("analysis kind");
    let quad_x = Quadratic::new(x, gamma);
    let quad_a = Quadratic::new(a, 1.0);
    let t = gamma * j.lambda;
    let mut zx = start.clone();
    let mut zu = a.apply_unchecked(&start);
    let mut qx = start;
    let mut pu;
    let mut trace = Vec::new();
    let mut prev: Option<ManifoldId> = None;
    for it in 1..=opts.iterations {
        let px = quad_x.solve(&(&zx + xty * gamma));
        pu = crate::penalty::block_soft_threshold(&zu, &blocks, t);
        let rx = &px * 2.0 - &zx;
        let ru = &pu * 2.0 - &zu;
        qx = quad_a.solve(&(&rx + a.adjoint_unchecked(&ru)));
        let qu = a.apply_unchecked(&qx);
        zx += &qx - &px;
        zu += &qu - &pu;
        if opts.record_objective && it % 100 == 0 {
            trace.push((it, super::objective(x, loss, j, &qx)?));
        }
        if checkpoint(it) || it == opts.iterations {
            let mask = active_mask(&pu, &blocks);
            let model = j.identify_mask(&qx, &mask)?;
            let last = it == opts.iterations;
            let id = model.manifold_id.clone();
            if opts.polish && (last || settled(prev.as_ref(), &id)) {
                if let Some(c) = try_polish(x, loss, j, model, target) {
                    return Ok(finish(c, target, it, trace, true));
                }
            }
            prev = Some(id);
            if !opts.polish {
                let c = candidate(x, loss, j, j.identify(&qx)?);
                if c.cert.kkt <= target {
                    return Ok(finish(c, target, it, trace, false));
                }
            }
        }
    }
    let model = j.identify(&qx)?;
    Ok(finish(candidate(x, loss, j, model), target, opts.iterations, trace, false))
}

fn active_mask(u: &Vector, blocks: &[Vec<usize>]) -> Vec<bool> {
    blocks.iter().map(|b| b.iter().any(|&i| u[i] != 0.0)).collect()
}
