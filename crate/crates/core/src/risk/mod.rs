//! Stein unbiased risk estimates and risk curves over a grid of weights.

pub mod generators;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::io::IoError;
use crate::linop::LinearMap;
use crate::penalty::{Penalty, PenaltyKind};
use crate::sensitivity::{divergence, DeltaOperator, DivergenceMethod, SensitivityError, SensitivityOptions};
use crate::solver::{solve_from, LossModel, SolveOptions, SolveResult};
use crate::{seeds, Vector};

type Scalar = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Componentwise link `μ ↦ h(μ)`.
#[derive(Clone, Default)]
pub enum LinkMap {
    #[default]
    Identity,
    /// `h_i(μ_i)` and its derivative `h_i′(μ_i)`, indexed by coordinate.
    Diagonal { h: Scalar, dh: Scalar },
}

impl std::fmt::Debug for LinkMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Identity => f.write_str("Identity"),
            Self::Diagonal { .. } => f.write_str("Diagonal"),
        }
    }
}

impl LinkMap {
    pub fn diagonal(
        h: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
        dh: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::Diagonal {
            h: Arc::new(h),
            dh: Arc::new(dh),
        }
    }

    pub fn apply(&self, mu: &Vector) -> Vector {
        match self {
            Self::Identity => mu.clone(),
            Self::Diagonal { h, .. } => Vector::from_iterator(mu.len(), mu.iter().enumerate().map(|(i, &m)| h(i, m))),
        }
    }

    /// Diagonal of the Jacobian at `mu`.
    pub fn jacobian_diag(&self, mu: &Vector) -> Vector {
        match self {
            Self::Identity => Vector::from_element(mu.len(), 1.0),
            Self::Diagonal { dh, .. } => {
                Vector::from_iterator(mu.len(), mu.iter().enumerate().map(|(i, &m)| dh(i, m)))
            }
        }
    }
}

/// `tr(diag(h′(μ̂)) Δ)`.
pub fn link_dof(delta: &DeltaOperator<'_>, link: &LinkMap, mu_hat: &Vector) -> Result<f64, SensitivityError> {
    let d = link.jacobian_diag(mu_hat);
    let n = mu_hat.len();
    let mut total = 0.0;
    for i in 0..n {
        if d[i] == 0.0 {
            continue;
        }
        let mut e = Vector::zeros(n);
        e[i] = 1.0;
        total += d[i] * delta.apply(&e)?[i];
    }
    Ok(total)
}

/// `‖y − h(μ̂)‖² + 2σ² DOF − nσ²`.
pub fn sure_gaussian(y: &Vector, mu_hat: &Vector, link: &LinkMap, dof_hat: f64, sigma: f64) -> f64 {
    let n = y.len() as f64;
    let s2 = sigma * sigma;
    (y - link.apply(mu_hat)).norm_squared() + 2.0 * s2 * dof_hat - n * s2
}

/// Continuous exponential family with density `B(y) exp(⟨y, μ⟩ − A(μ))`.
#[derive(Clone)]
pub struct GlmSpec {
    pub grad_log_b: Arc<dyn Fn(&Vector) -> Vector + Send + Sync>,
    /// `‖μ0‖²`, when known.
    pub mu0_norm2: Option<f64>,
}

impl std::fmt::Debug for GlmSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlmSpec").field("mu0_norm2", &self.mu0_norm2).finish_non_exhaustive()
    }
}

impl GlmSpec {
    pub fn new(grad_log_b: impl Fn(&Vector) -> Vector + Send + Sync + 'static, mu0_norm2: Option<f64>) -> Self {
        Self {
            grad_log_b: Arc::new(grad_log_b),
            mu0_norm2,
        }
    }

    /// Unit-variance Gaussian: `log B(y) = −‖y‖²/2`.
    pub fn gaussian(mu0_norm2: Option<f64>) -> Self {
        Self::new(|y| -y, mu0_norm2)
    }
}

/// `‖∇log B(y) + μ̂‖² + 2 DOF − ‖∇log B(y)‖² + ‖μ0‖²`, unbiased for
/// `E‖μ̂ − μ0‖²`. Without `‖μ0‖²` the value is shifted by that constant.
pub fn sure_glm(y: &Vector, mu_hat: &Vector, dof_hat: f64, glm: &GlmSpec) -> f64 {
    let g = (glm.grad_log_b)(y);
    (&g + mu_hat).norm_squared() + 2.0 * dof_hat - g.norm_squared() + glm.mu0_norm2.unwrap_or(0.0)
}

/// Where the observations of a risk curve come from.
#[derive(Clone, Debug)]
pub enum Observations {
    /// Fresh Gaussian noise of level `sigma` on a known mean `mu0`.
    Synthetic { mu0: Vector },
    /// Fixed observations, one per replication; the risk is unknown.
    Given(Vec<Vector>),
}

#[derive(Clone, Debug)]
pub struct RiskProblem {
    pub design: LinearMap,
    pub penalty: PenaltyKind,
    pub sigma: f64,
    pub observations: Observations,
}

impl RiskProblem {
    /// Observation of replication `rep`.
    pub fn observation(&self, seed: u64, rep: usize) -> Vector {
        match &self.observations {
            Observations::Synthetic { mu0 } => {
                mu0 + seeds::normal_vector(&mut seeds::rng(seed, &[0x5e, rep as u64]), mu0.len()) * self.sigma
            }
            Observations::Given(ys) => ys[rep].clone(),
        }
    }

    pub fn mu0(&self) -> Option<&Vector> {
        match &self.observations {
            Observations::Synthetic { mu0 } => Some(mu0),
            Observations::Given(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CurveOptions {
    pub solve: SolveOptions,
    pub sensitivity: SensitivityOptions,
    pub method: DivergenceMethod,
    /// Reuse the previous solution along the grid.
    pub warm_start: bool,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            sensitivity: SensitivityOptions::default(),
            method: DivergenceMethod::ClosedForm,
            warm_start: true,
        }
    }
}

/// One `(λ, replication)` evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveCell {
    pub lambda: f64,
    pub rep: usize,
    pub sure: f64,
    pub dof: f64,
    pub risk: Option<f64>,
    pub margin: f64,
    pub cinj: bool,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskCurve {
    pub lambdas: Vec<f64>,
    pub sure_mean: Vec<f64>,
    pub sure_std: Vec<f64>,
    pub dof_mean: Vec<f64>,
    pub risk_mean: Option<Vec<f64>>,
    pub risk_std: Option<Vec<f64>>,
    /// Cells that produced a value, per `λ`.
    pub counts: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// `cells[k]` lists the replications of `lambdas[k]`; failed cells are
    /// `None`.
    pub cells: Vec<Vec<Option<CurveCell>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error("λ grid must be nonempty, finite, nonnegative and ascending")]
    InvalidGrid,
    #[error("replications must be positive and match the given observations")]
    InvalidReplications,
    #[error("noise level must be positive")]
    InvalidSigma,
    #[error(transparent)]
    Io(#[from] IoError),
}

fn evaluate(
    problem: &RiskProblem,
    y: &Vector,
    lambda: f64,
    rep: usize,
    warm: Option<&Vector>,
    opts: &CurveOptions,
) -> Result<(CurveCell, SolveResult), SensitivityError> {
    let j = Penalty::new(problem.penalty.clone(), lambda)?;
    let loss = LossModel::squared(y.clone());
    let r = solve_from(&problem.design, &loss, &j, &opts.solve, warm)?;
    let report = divergence(&problem.design, &loss, &j, &r, opts.method, &opts.sensitivity)?;
    let sure = sure_gaussian(y, &r.mu_hat, &LinkMap::Identity, report.divergence, problem.sigma);
    let risk = problem.mu0().map(|m| (&r.mu_hat - m).norm_squared());
    let cell = CurveCell {
        lambda,
        rep,
        sure,
        dof: report.divergence,
        risk,
        margin: r.certificate_margin,
        cinj: report.cinj,
        converged: r.converged,
    };
    Ok((cell, r))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Solves, differentiates and evaluates SURE for every `(λ, replication)`
/// cell. Replications run in parallel; each walks the grid in order.
pub fn risk_curve(
    problem: &RiskProblem,
    lambdas: &[f64],
    replications: usize,
    seed: u64,
    opts: &CurveOptions,
) -> Result<RiskCurve, RiskError> {
    if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(RiskError::InvalidGrid);
    }
    if !(problem.sigma > 0.0) {
        return Err(RiskError::InvalidSigma);
    }
    if replications == 0 || matches!(&problem.observations, Observations::Given(ys) if ys.len() < replications) {
        return Err(RiskError::InvalidReplications);
    }
    let per_rep: Vec<Vec<Option<CurveCell>>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let y = problem.observation(seed, rep);
            let mut warm: Option<Vector> = None;
            lambdas
                .iter()
                .map(|&lambda| {
                    let start = if opts.warm_start { warm.as_ref() } else { None };
                    match evaluate(problem, &y, lambda, rep, start, opts) {
                        Ok((cell, r)) => {
                            warm = Some(r.x_hat);
                            Some(cell)
                        }
                        Err(e) => {
                            log::warn!("cell λ={lambda} rep={rep} failed: {e}");
                            None
                        }
                    }
                })
                .collect()
        })
        .collect();
    let mut cells = vec![Vec::with_capacity(replications); lambdas.len()];
    for rep_cells in per_rep {
        for (k, c) in rep_cells.into_iter().enumerate() {
            cells[k].push(c);
        }
    }
    let mut curve = RiskCurve {
        lambdas: lambdas.to_vec(),
        sure_mean: Vec::new(),
        sure_std: Vec::new(),
        dof_mean: Vec::new(),
        risk_mean: problem.mu0().map(|_| Vec::new()),
        risk_std: problem.mu0().map(|_| Vec::new()),
        counts: Vec::new(),
        replications,
        seed,
        cells,
    };
    for row in &curve.cells {
        let ok: Vec<&CurveCell> = row.iter().flatten().collect();
        let (sm, ss) = mean_std(&ok.iter().map(|c| c.sure).collect::<Vec<_>>());
        let (dm, _) = mean_std(&ok.iter().map(|c| c.dof).collect::<Vec<_>>());
        curve.sure_mean.push(sm);
        curve.sure_std.push(ss);
        curve.dof_mean.push(dm);
        curve.counts.push(ok.len());
        if let (Some(rm), Some(rs)) = (curve.risk_mean.as_mut(), curve.risk_std.as_mut()) {
            let (m, s) = mean_std(&ok.iter().filter_map(|c| c.risk).collect::<Vec<_>>());
            rm.push(m);
            rs.push(s);
        }
    }
    Ok(curve)
}

fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

impl RiskCurve {
    /// Grid index minimizing the mean SURE.
    pub fn sure_argmin(&self) -> Option<usize> {
        argmin(&self.sure_mean)
    }

    /// Grid index minimizing the mean empirical risk.
    pub fn risk_argmin(&self) -> Option<usize> {
        self.risk_mean.as_deref().and_then(argmin)
    }

    /// One row per cell: `lambda,rep,sure,dof,risk,margin,cinj`; failed
    /// cells keep their `lambda,rep` and leave the rest empty.
    pub fn cells_csv(&self) -> String {
        let mut out = String::from("lambda,rep,sure,dof,risk,margin,cinj\n");
        for (k, row) in self.cells.iter().enumerate() {
            for (rep, cell) in row.iter().enumerate() {
                match cell {
                    Some(c) => {
                        let risk = c.risk.map(|r| r.to_string()).unwrap_or_default();
                        let _ = writeln!(out, "{},{},{},{},{},{},{}", c.lambda, c.rep, c.sure, c.dof, risk, c.margin, c.cinj);
                    }
                    None => {
                        let _ = writeln!(out, "{},{},,,,,", self.lambdas[k], rep);
                    }
                }
            }
        }
        out
    }

    /// One row per `λ`: `lambda,count,sure_mean,sure_std,dof_mean,risk_mean,risk_std`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("lambda,count,sure_mean,sure_std,dof_mean,risk_mean,risk_std\n");
        for k in 0..self.lambdas.len() {
            let (rm, rs) = match (&self.risk_mean, &self.risk_std) {
                (Some(m), Some(s)) => (m[k].to_string(), s[k].to_string()),
                _ => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.lambdas[k], self.counts[k], self.sure_mean[k], self.sure_std[k], self.dof_mean[k], rm, rs
            );
        }
        out
    }

    pub fn write_csv(&self, cells: impl AsRef<Path>, summary: impl AsRef<Path>) -> Result<(), RiskError> {
        for (path, body) in [(cells.as_ref(), self.cells_csv()), (summary.as_ref(), self.summary_csv())] {
            std::fs::write(path, body).map_err(|source| IoError::File {
                path: path.to_path_buf(),
                source,
            })?;
        }
        Ok(())
    }
}

/// Ascending grid of `count` values, linear or logarithmic between `lo` and
/// `hi`.
pub fn lambda_grid(lo: f64, hi: f64, count: usize, log_spaced: bool) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|k| {
            let t = k as f64 / (count - 1) as f64;
            if log_spaced {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    fn v(x: &[f64]) -> Vector {
        Vector::from_vec(x.to_vec())
    }

    #[test]
    fn identity_estimator_sure() {
        let y = v(&[1.0, -2.0, 0.5]);
        assert!((sure_gaussian(&y, &y, &LinkMap::Identity, 3.0, 2.0) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn zero_estimator_sure() {
        let y = v(&[1.0, -2.0, 0.5]);
        let s = sure_gaussian(&y, &Vector::zeros(3), &LinkMap::Identity, 0.0, 1.0);
        assert!((s - (y.norm_squared() - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn glm_constant_and_dof_terms() {
        let y = v(&[1.0, 2.0]);
        let mu = v(&[0.5, 1.0]);
        let with = sure_glm(&y, &mu, 1.0, &GlmSpec::gaussian(Some(3.0)));
        let without = sure_glm(&y, &mu, 1.0, &GlmSpec::gaussian(None));
        assert!((with - without - 3.0).abs() < 1e-12);
        let shifted = sure_glm(&y, &mu, 2.5, &GlmSpec::gaussian(None));
        assert!((shifted - without - 3.0).abs() < 1e-12);
        let gauss = sure_gaussian(&y, &mu, &LinkMap::Identity, 1.0, 1.0);
        assert!((without - (gauss + 2.0 - y.norm_squared())).abs() < 1e-12);
    }

    #[test]
    fn link_jacobian() {
        let link = LinkMap::diagonal(|_, m| m.tanh(), |_, m| 1.0 - m.tanh().powi(2));
        let mu = v(&[0.0, 1.0]);
        assert_eq!(link.jacobian_diag(&mu)[0], 1.0);
        assert_eq!(LinkMap::Identity.jacobian_diag(&mu), Vector::from_element(2, 1.0));
    }

    #[test]
    fn degenerate_grid_orthonormal() {
        let q = Matrix::from_row_slice(2, 2, &[0.6, 0.8, -0.8, 0.6]);
        let problem = RiskProblem {
            design: LinearMap::dense(q),
            penalty: PenaltyKind::Lasso,
            sigma: 1.5,
            observations: Observations::Synthetic { mu0: v(&[1.0, 2.0]) },
        };
        let curve = risk_curve(&problem, &[0.0], 3, 7, &CurveOptions::default()).unwrap();
        for c in curve.cells[0].iter().flatten() {
            assert!((c.sure - 2.0 * 1.5 * 1.5).abs() < 1e-6, "{}", c.sure);
        }
        assert_eq!(curve.cells_csv().lines().count(), 4);
    }

    #[test]
    fn grid_validation() {
        let problem = RiskProblem {
            design: LinearMap::identity(2),
            penalty: PenaltyKind::Lasso,
            sigma: 1.0,
            observations: Observations::Given(vec![v(&[1.0, 0.0])]),
        };
        assert!(matches!(
            risk_curve(&problem, &[1.0, 0.5], 1, 0, &CurveOptions::default()),
            Err(RiskError::InvalidGrid)
        ));
        assert!(matches!(
            risk_curve(&problem, &[1.0], 2, 0, &CurveOptions::default()),
            Err(RiskError::InvalidReplications)
        ));
    }

    #[test]
    fn grids() {
        assert_eq!(lambda_grid(1.0, 3.0, 3, false), vec![1.0, 2.0, 3.0]);
        let g = lambda_grid(0.1, 10.0, 3, true);
        assert!((g[1] - 1.0).abs() < 1e-12);
    }
}
