//! Invariant suites. Each check is a function of a seed, so a failure
//! reported with its seed replays exactly through [`run_check`].

use std::time::Instant;

use crate::linop::{Conv2d, LinearMap};
use crate::penalty::{Blocks, Penalty, PenaltyKind};
use crate::risk::{generators, risk_curve, CurveOptions, Observations, RiskProblem};
use crate::sensitivity::{check_restricted_pd, divergence, solution_jacobian_apply, DivergenceMethod, SensitivityOptions};
use crate::solver::{solve, solve_from, LossModel, SaddleOptions, SolveOptions};
use crate::{seeds, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckLevel {
    Fast,
    Full,
}

impl std::str::FromStr for CheckLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fast" => Ok(Self::Fast),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown check level {other:?} (expected fast or full)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for o in &self.outcomes {
            writeln!(
                f,
                "{} {} (seed {}, {:.1}s): {}",
                if o.passed { "ok  " } else { "FAIL" },
                o.name,
                o.seed,
                o.seconds,
                o.detail
            )?;
        }
        Ok(())
    }
}

type Check = fn(u64) -> Result<String, String>;

/// `(name, full level only, check)`.
pub const CHECKS: &[(&str, bool, Check)] = &[
    ("adjoint", false, adjoint),
    ("prox-nonexpansive", false, prox_nonexpansive),
    ("tangent-projector", false, tangent_projector),
    ("closed-form-vs-exact-trace", false, closed_vs_exact),
    ("jacobian-vs-finite-differences", false, jacobian_fd),
    ("sure-unbiased-lasso", true, sure_lasso),
    ("sure-unbiased-group-lasso", true, sure_group),
];

const DEFAULT_SEED: u64 = 20_240;

fn outcome(name: &'static str, seed: u64, check: Check) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match check(seed) {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckOutcome {
        name,
        seed,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_checks(level: CheckLevel) -> CheckReport {
    let outcomes = CHECKS
        .iter()
        .filter(|(_, full, _)| level == CheckLevel::Full || !full)
        .map(|&(name, _, check)| outcome(name, DEFAULT_SEED, check))
        .collect();
    CheckReport { outcomes }
}

/// Runs one named check with an explicit seed.
pub fn run_check(name: &str, seed: u64) -> Option<CheckOutcome> {
    CHECKS.iter().find(|c| c.0 == name).map(|&(n, _, check)| outcome(n, seed, check))
}

fn gaussian(rng: &mut rand_chacha::ChaCha8Rng, n: usize, p: usize) -> Matrix {
    let v = seeds::normal_vector(rng, n * p) / (n as f64).sqrt();
    Matrix::from_column_slice(n, p, v.as_slice())
}

fn tv(h: usize, w: usize) -> PenaltyKind {
    PenaltyKind::GeneralGroupLasso {
        analysis: LinearMap::grad2d(h, w),
        blocks: Blocks::uniform(h * w, 2).expect("nonempty grid"),
    }
}

fn adjoint(seed: u64) -> Result<String, String> {
    let mut rng = seeds::rng(seed, &[1]);
    let (h, w) = (5, 6);
    let conv = Conv2d::gaussian(h, w, 1.0).map_err(|e| e.to_string())?;
    let maps = [
        LinearMap::dense(gaussian(&mut rng, 7, h * w)),
        LinearMap::conv2d(conv.clone()),
        LinearMap::conv2d(conv.with_spectral()),
        LinearMap::grad2d(h, w),
        LinearMap::subsample(h * w, (0..h * w).step_by(3).collect()).map_err(|e| e.to_string())?,
    ];
    let mut worst: f64 = 0.0;
    for (k, a) in maps.iter().enumerate() {
        for t in 0..20 {
            let mut r = seeds::rng(seed, &[2, k as u64, t]);
            let x = seeds::normal_vector(&mut r, a.cols());
            let z = seeds::normal_vector(&mut r, a.rows());
            let ax = a.apply_unchecked(&x);
            let lhs = ax.dot(&z);
            let rhs = x.dot(&a.adjoint_unchecked(&z));
            worst = worst.max((lhs - rhs).abs() / (ax.norm() * z.norm()).max(f64::MIN_POSITIVE));
        }
    }
    let msg = format!("worst relative adjoint mismatch {worst:.1e}");
    if worst <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn penalties() -> Vec<Penalty> {
    let kinds = vec![
        PenaltyKind::Lasso,
        PenaltyKind::GroupLasso { blocks: Blocks::uniform(4, 4).expect("blocks") },
        tv(4, 4),
        PenaltyKind::Linf,
        PenaltyKind::Nuclear { rows: 4, cols: 4 },
        PenaltyKind::SphereHinge,
    ];
    kinds.into_iter().map(|k| Penalty::new(k, 0.7).expect("valid penalty")).collect()
}

fn prox_nonexpansive(seed: u64) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for (k, j) in penalties().iter().enumerate() {
        for t in 0..10 {
            let mut r = seeds::rng(seed, &[3, k as u64, t]);
            let a = seeds::normal_vector(&mut r, 16) * 2.0;
            let b = seeds::normal_vector(&mut r, 16) * 2.0;
            let pa = j.prox(&a, 1.0).map_err(|e| e.to_string())?;
            let pb = j.prox(&b, 1.0).map_err(|e| e.to_string())?;
            worst = worst.max((&pa - &pb).norm() / (&a - &b).norm());
        }
    }
    let msg = format!("largest ‖prox(a) − prox(b)‖ / ‖a − b‖ = {worst:.6}");
    if worst <= 1.0 + 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tangent_projector(seed: u64) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for (k, j) in penalties().iter().enumerate() {
        let mut r = seeds::rng(seed, &[4, k as u64]);
        let x = j.prox(&(seeds::normal_vector(&mut r, 16) * 2.0), 1.0).map_err(|e| e.to_string())?;
        let m = j.identify(&x).map_err(|e| e.to_string())?;
        let p = m.projector();
        let idem = (&p * &p - &p).amax();
        let sym = (&p - p.transpose()).amax();
        worst = worst.max(idem).max(sym);
    }
    let msg = format!("worst |P² − P| or |P − Pᵀ| entry {worst:.1e}");
    if worst <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn instance(seed: u64, k: u64, kind: PenaltyKind, frac: f64) -> (LinearMap, Vector, Penalty) {
    let mut rng = seeds::rng(seed, &[5, k]);
    let x = gaussian(&mut rng, 20, 40);
    let x0 = generators::sparse(&mut rng, 40, 5, 2.0);
    let y = &x * x0 + seeds::normal_vector(&mut rng, 20) * 0.3;
    let lambda = frac * (x.transpose() * &y).amax();
    (LinearMap::dense(x), y, Penalty::new(kind, lambda).expect("valid penalty"))
}

fn closed_vs_exact(seed: u64) -> Result<String, String> {
    let opts = SensitivityOptions::default();
    let mut worst: f64 = 0.0;
    let mut used = 0;
    for k in 0..10 {
        let kind = if k % 2 == 0 {
            PenaltyKind::Lasso
        } else {
            PenaltyKind::GroupLasso { blocks: Blocks::uniform(10, 4).expect("blocks") }
        };
        let (x, y, j) = instance(seed, k, kind, 0.3);
        let loss = LossModel::squared(y);
        let r = solve(&x, &loss, &j, &SolveOptions::default()).map_err(|e| e.to_string())?;
        if !r.converged || !check_restricted_pd(&x, &r.active).map_err(|e| e.to_string())?.0 {
            continue;
        }
        used += 1;
        let c = divergence(&x, &loss, &j, &r, DivergenceMethod::ClosedForm, &opts).map_err(|e| e.to_string())?;
        let e = divergence(&x, &loss, &j, &r, DivergenceMethod::ExactTrace, &opts).map_err(|e| e.to_string())?;
        worst = worst.max((c.divergence - e.divergence).abs());
    }
    let msg = format!("{used} instances, max |closed − exact| {worst:.1e}");
    if used > 0 && worst <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn jacobian_fd(seed: u64) -> Result<String, String> {
    let (x, y, j) = instance(seed, 100, PenaltyKind::Lasso, 0.3);
    let loss = LossModel::squared(y.clone());
    let r = solve(&x, &loss, &j, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let tight = SolveOptions {
        kkt_tol: 1e-13,
        ..SolveOptions::default()
    };
    let eps = 1e-6 * y.norm();
    let mut worst: f64 = 0.0;
    for d in 0..5 {
        let mut dy = seeds::normal_vector(&mut seeds::rng(seed, &[6, d]), y.len());
        dy /= dy.norm();
        let jd = solution_jacobian_apply(&x, &r.active, &dy, &SaddleOptions::default()).map_err(|e| e.to_string())?;
        let s = solve_from(&x, &LossModel::squared(&y + &dy * eps), &j, &tight, Some(&r.x_hat)).map_err(|e| e.to_string())?;
        if s.active.manifold_id != r.active.manifold_id {
            return Err(format!("manifold changed along direction {d}"));
        }
        let fd = (&s.x_hat - &r.x_hat) / eps;
        worst = worst.max((&fd - &jd).norm() / jd.norm().max(f64::MIN_POSITIVE));
    }
    let msg = format!("worst relative Jacobian error {worst:.1e}");
    if worst <= 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn unbiased(seed: u64, kind: PenaltyKind, x0: Vector, xm: Matrix, lambda: f64) -> Result<String, String> {
    let reps = 10_000;
    let problem = RiskProblem {
        design: LinearMap::dense(xm.clone()),
        penalty: kind,
        sigma: 1.0,
        observations: Observations::Synthetic { mu0: &xm * x0 },
    };
    let curve = risk_curve(&problem, &[lambda], reps, seed, &CurveOptions::default()).map_err(|e| e.to_string())?;
    let cells: Vec<_> = curve.cells[0].iter().flatten().collect();
    let n = cells.len() as f64;
    let stats = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
        (m, var)
    };
    let (ms, vs) = stats(cells.iter().map(|c| c.sure).collect());
    let (mr, vr) = stats(cells.iter().filter_map(|c| c.risk).collect());
    let bound = 3.0 * (vs / n + vr / n).sqrt();
    let msg = format!("mean SURE {ms:.3}, mean risk {mr:.3}, gap {:.3} (bound {bound:.3}, {} cells)", (ms - mr).abs(), cells.len());
    if (ms - mr).abs() <= bound && cells.len() == reps {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sure_lasso(seed: u64) -> Result<String, String> {
    let mut rng = seeds::rng(seed, &[7]);
    let xm = gaussian(&mut rng, 10, 20);
    let x0 = generators::sparse(&mut rng, 20, 3, 2.0);
    unbiased(seed, PenaltyKind::Lasso, x0, xm, 1.0)
}

fn sure_group(seed: u64) -> Result<String, String> {
    let mut rng = seeds::rng(seed, &[8]);
    let blocks = Blocks::uniform(4, 5).expect("blocks");
    let xm = gaussian(&mut rng, 10, 20);
    let x0 = generators::group_sparse(&mut rng, blocks.groups(), 1, 2.0);
    unbiased(seed, PenaltyKind::GroupLasso { blocks }, x0, xm, 1.0)
}
