//! Acceptance report: one line per criterion, nonzero exit on failure.

mod common;

use std::time::{Duration, Instant};

use common::{blur, gaussian_design, rel, tv_kind};
use pssure::linop::{Conv2d, MATERIALIZE_CAP};
use pssure::penalty::{mat_to_vec, vec_to_mat, Blocks, ManifoldId, PenaltyKind};
use pssure::risk::{generators, risk_curve, CurveOptions, Observations, RiskProblem};
use pssure::sensitivity::{
    check_restricted_pd, closed_form_divergence, divergence, repair_solution, solution_jacobian_apply, DeltaOperator,
    DivergenceMethod, ProbeKind, SensitivityOptions,
};
use pssure::solver::{evaluate, solve, solve_from, solve_saddle, SaddleMethod, SaddleOptions};
use pssure::{seeds, LinearMap, LossModel, Matrix, Penalty, SolveOptions, SolveResult, Vector};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn sensitivity_opts() -> SensitivityOptions {
    SensitivityOptions::default()
}

fn solve_tight(x: &LinearMap, y: &Vector, j: &Penalty) -> SolveResult {
    solve(x, &LossModel::squared(y.clone()), j, &SolveOptions::default()).expect("solve")
}

fn ac1() -> Verdict {
    let mut rng = seeds::rng(101, &[]);
    let (h, w) = (6, 7);
    let conv = Conv2d::gaussian(h, w, 1.2).unwrap();
    let mask: Vec<usize> = (0..h * w).filter(|i| i % 2 == 0).collect();
    let dense = LinearMap::dense(gaussian_design(&mut rng, 13, h * w));
    let kinds: Vec<(&str, LinearMap)> = vec![
        ("identity", LinearMap::identity(h * w)),
        ("dense", dense.clone()),
        ("conv2d", LinearMap::conv2d(conv.clone())),
        ("conv2d-spectral", LinearMap::conv2d(conv.clone().with_spectral())),
        ("conv2d-uniform", LinearMap::conv2d(Conv2d::uniform(h, w, 3).unwrap())),
        (
            "subsample∘conv2d",
            LinearMap::compose(LinearMap::subsample(h * w, mask).unwrap(), LinearMap::conv2d(conv)).unwrap(),
        ),
        ("grad2d", LinearMap::grad2d(h, w)),
        (
            "block-extractor",
            LinearMap::block_extractor(h * w, vec![vec![0, 1, 2], vec![2, 3], (5..h * w).collect()]).unwrap(),
        ),
        ("composition", LinearMap::compose(dense.clone(), LinearMap::grad2d(h, w).adjoint()).unwrap()),
        ("adjoint", dense.adjoint()),
    ];
    let mut worst: f64 = 0.0;
    let mut worst_kind = "";
    for (name, a) in &kinds {
        for t in 0..100u64 {
            let mut r = seeds::rng(102, &[t]);
            let x = seeds::normal_vector(&mut r, a.cols());
            let z = seeds::normal_vector(&mut r, a.rows());
            let ax = a.apply(&x).unwrap();
            let atz = a.adjoint_apply(&z).unwrap();
            let err = (ax.dot(&z) - x.dot(&atz)).abs() / (ax.norm() * z.norm()).max(f64::MIN_POSITIVE);
            if err > worst {
                worst = err;
                worst_kind = name;
            }
        }
    }
    verdict(
        worst <= 1e-10,
        format!("{} kinds x 100 trials, worst relative error {worst:.2e} ({worst_kind})", kinds.len()),
    )
}

fn lasso_instance(seed: u64, n: usize, p: usize, k: usize, frac: f64) -> (LinearMap, Vector, Penalty) {
    let mut rng = seeds::rng(seed, &[]);
    let xm = gaussian_design(&mut rng, n, p);
    let x0 = generators::sparse(&mut rng, p, k, 2.0);
    let y = &xm * x0 + seeds::normal_vector(&mut rng, n) * 0.3;
    let lambda = frac * (xm.transpose() * &y).amax();
    (LinearMap::dense(xm), y, Penalty::lasso(lambda))
}

fn ac2() -> Verdict {
    let mut accepted = 0;
    let mut attempts = 0;
    let mut worst: f64 = 0.0;
    let mut mismatch = 0;
    let opts = sensitivity_opts();
    while accepted < 50 && attempts < 1000 {
        attempts += 1;
        let (x, y, j) = lasso_instance(2000 + attempts, 20, 40, 5, 0.25);
        let loss = LossModel::squared(y.clone());
        let r = solve_tight(&x, &y, &j);
        let (cinj, _) = check_restricted_pd(&x, &r.active).unwrap();
        if !(r.converged && cinj && r.certificate_margin > 0.05) {
            continue;
        }
        accepted += 1;
        let supp = r.x_hat.iter().filter(|v| **v != 0.0).count() as f64;
        let closed = divergence(&x, &loss, &j, &r, DivergenceMethod::ClosedForm, &opts).unwrap().divergence;
        let exact = divergence(&x, &loss, &j, &r, DivergenceMethod::ExactTrace, &opts).unwrap().divergence;
        if closed != supp {
            mismatch += 1;
        }
        worst = worst.max((closed - exact).abs());
    }
    verdict(
        accepted == 50 && mismatch == 0 && worst <= 1e-6,
        format!("{accepted} instances ({attempts} drawn), closed≠|supp| in {mismatch}, max |closed−exact| {worst:.2e}"),
    )
}

/// Worst relative error of the Jacobian against forward differences over
/// 20 unit directions.
fn jacobian_check(x: &LinearMap, y: &Vector, j: &Penalty, seed: u64) -> Result<f64, String> {
    let r = solve_tight(x, y, j);
    if !r.converged {
        return Err(format!("solver residual {:.2e}", r.kkt_residual));
    }
    let (cinj, min) = check_restricted_pd(x, &r.active).unwrap();
    if !cinj || r.certificate_margin <= 0.0 {
        return Err(format!("cinj {cinj} (min eig {min:.2e}), margin {:.3}", r.certificate_margin));
    }
    let eps = 1e-6 * y.norm();
    let opts = SolveOptions {
        kkt_tol: 1e-13,
        ..SolveOptions::default()
    };
    let mut worst: f64 = 0.0;
    for d in 0..20u64 {
        let mut dy = seeds::normal_vector(&mut seeds::rng(seed, &[d]), y.len());
        dy /= dy.norm();
        let jd = solution_jacobian_apply(x, &r.active, &dy, &SaddleOptions::default()).unwrap();
        let shifted = solve_from(x, &LossModel::squared(y + &dy * eps), j, &opts, Some(&r.x_hat)).unwrap();
        if shifted.active.manifold_id != r.active.manifold_id {
            return Err(format!("manifold changed along direction {d}"));
        }
        let fd = (&shifted.x_hat - &r.x_hat) / eps;
        worst = worst.max(rel(&fd, &jd));
    }
    Ok(worst)
}

fn tv_instance(seed: u64, h: usize, w: usize, blur_sigma: f64, noise: f64, lambda: f64) -> (LinearMap, Vector, Penalty, Vector) {
    let mut rng = seeds::rng(seed, &[]);
    let img = generators::piecewise_constant(&mut rng, h, w, 4, 10.0);
    let x = if blur_sigma > 0.0 { blur(h, w, blur_sigma) } else { LinearMap::identity(h * w) };
    let mu0 = x.apply(&img).unwrap();
    let y = &mu0 + seeds::normal_vector(&mut rng, h * w) * noise;
    (x, y, Penalty::new(tv_kind(h, w), lambda).unwrap(), mu0)
}

fn group_instance(seed: u64, n: usize, blocks: usize, size: usize, active: usize, frac: f64) -> (LinearMap, Vector, Penalty) {
    let mut rng = seeds::rng(seed, &[]);
    let p = blocks * size;
    let b = Blocks::uniform(blocks, size).unwrap();
    let xm = gaussian_design(&mut rng, n, p);
    let x0 = generators::group_sparse(&mut rng, b.groups(), active, 2.0);
    let y = &xm * x0 + seeds::normal_vector(&mut rng, n) * 0.3;
    let g = xm.transpose() * &y;
    let max_block = b.groups().iter().map(|bl| bl.iter().map(|&i| g[i] * g[i]).sum::<f64>().sqrt()).fold(0.0, f64::max);
    (LinearMap::dense(xm), y, Penalty::new(PenaltyKind::GroupLasso { blocks: b }, frac * max_block).unwrap())
}

fn linf_instance(seed: u64, n: usize, p: usize) -> (LinearMap, Vector, Penalty) {
    let mut rng = seeds::rng(seed, &[]);
    let xm = gaussian_design(&mut rng, n, p);
    let x0 = Vector::from_iterator(p, (0..p).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }));
    let y = &xm * x0 + seeds::normal_vector(&mut rng, n) * 0.3;
    let lambda = 0.3 * (xm.transpose() * &y).lp_norm(1);
    (LinearMap::dense(xm), y, Penalty::new(PenaltyKind::Linf, lambda).unwrap())
}

fn ac3() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    let cases: Vec<(&str, LinearMap, Vector, Penalty)> = {
        let (x1, y1, j1) = lasso_instance(31, 20, 40, 5, 0.25);
        let (x2, y2, j2) = group_instance(32, 20, 6, 4, 2, 0.3);
        let (x3, y3, j3) = linf_instance(33, 20, 10);
        let (x4, y4, j4, _) = tv_instance(34, 8, 8, 1.0, 0.5, 1.0);
        vec![("lasso", x1, y1, j1), ("group", x2, y2, j2), ("linf", x3, y3, j3), ("tv8x8", x4, y4, j4)]
    };
    for (k, (name, x, y, j)) in cases.iter().enumerate() {
        match jacobian_check(x, y, j, 300 + k as u64) {
            Ok(e) => {
                pass &= e <= 1e-4;
                parts.push(format!("{name} {e:.1e}"));
            }
            Err(msg) => {
                pass = false;
                parts.push(format!("{name} invalid: {msg}"));
            }
        }
    }
    verdict(pass, format!("worst relative FD error: {}", parts.join(", ")))
}

fn ac4() -> Verdict {
    let opts = sensitivity_opts();
    let mut parts = Vec::new();
    let mut pass = true;
    let (xg, yg, jg) = group_instance(41, 20, 6, 4, 2, 0.3);
    let (xt, yt, jt, _) = tv_instance(42, 8, 8, 1.0, 0.5, 1.0);
    for (name, x, y, j) in [("group", &xg, &yg, &jg), ("tv8x8", &xt, &yt, &jt)] {
        let loss = LossModel::squared(y.clone());
        let r = solve_tight(x, y, j);
        let exact = divergence(x, &loss, j, &r, DivergenceMethod::ExactTrace, &opts).unwrap().divergence;
        let fd = divergence(
            x,
            &loss,
            j,
            &r,
            DivergenceMethod::FiniteDifference { eps: None, probes: 100, seed: 7, probe: ProbeKind::Gaussian },
            &opts,
        )
        .unwrap();
        let canonical = divergence(
            x,
            &loss,
            j,
            &r,
            DivergenceMethod::FiniteDifference { eps: None, probes: 0, seed: 0, probe: ProbeKind::Canonical },
            &opts,
        )
        .unwrap()
        .divergence;
        let se = fd.mc_std_error.unwrap();
        let tol = (1e-3 * exact.abs()).max(3.0 * se);
        let ce = (canonical - exact).abs() / exact.abs();
        pass &= (fd.divergence - exact).abs() <= tol && ce <= 1e-3 && r.certificate_margin > 0.0;
        parts.push(format!(
            "{name}: exact {exact:.4} fd {:.4} ± {se:.3}, canonical fd {canonical:.4} ({ce:.1e}), margin {:.3}",
            fd.divergence, r.certificate_margin
        ));
        if name == "tv8x8" {
            let ks = [100usize, 1000, 10000];
            let errs: Vec<f64> = ks
                .iter()
                .map(|&k| {
                    divergence(x, &loss, j, &r, DivergenceMethod::MonteCarlo { probes: k, seed: 9 }, &opts)
                        .unwrap()
                        .mc_std_error
                        .unwrap()
                })
                .collect();
            let lx: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
            let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
            let mx = lx.iter().sum::<f64>() / 3.0;
            let my = ly.iter().sum::<f64>() / 3.0;
            let slope = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
                / lx.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>();
            pass &= (slope + 0.5).abs() <= 0.1;
            parts.push(format!("mc std-error slope {slope:.3}"));
        }
    }
    verdict(pass, parts.join("; "))
}

struct Unbiased {
    pass: bool,
    summary: String,
}

fn unbiasedness(name: &str, problem: &RiskProblem, lambda: f64, reps: usize, seed: u64) -> Unbiased {
    let curve = risk_curve(problem, &[lambda], reps, seed, &CurveOptions::default()).unwrap();
    let cells: Vec<_> = curve.cells[0].iter().flatten().collect();
    let n = cells.len() as f64;
    let sure: Vec<f64> = cells.iter().map(|c| c.sure).collect();
    let risk: Vec<f64> = cells.iter().map(|c| c.risk.unwrap()).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let gap = (mean(&sure) - mean(&risk)).abs();
    let bound = 3.0 * (var(&sure) / n + var(&risk) / n).sqrt();
    let bad = cells.iter().filter(|c| !c.cinj || !c.converged).count();
    Unbiased {
        pass: gap <= bound && cells.len() == reps,
        summary: format!(
            "{name}: SURE {:.3} risk {:.3} |gap| {gap:.3} ≤ {bound:.3} ({} cells, {bad} flagged)",
            mean(&sure),
            mean(&risk),
            cells.len()
        ),
    }
}

fn ac5() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    let start = Instant::now();

    let mut rng = seeds::rng(51, &[]);
    let xm = gaussian_design(&mut rng, 10, 20);
    let x0 = generators::sparse(&mut rng, 20, 3, 2.0);
    let lasso = RiskProblem {
        design: LinearMap::dense(xm.clone()),
        penalty: PenaltyKind::Lasso,
        sigma: 1.0,
        observations: Observations::Synthetic { mu0: &xm * &x0 },
    };
    let u = unbiasedness("lasso", &lasso, 1.0, 10_000, 52);
    pass &= u.pass;
    parts.push(u.summary);

    let blocks = Blocks::uniform(4, 5).unwrap();
    let xg = gaussian_design(&mut rng, 10, 20);
    let g0 = generators::group_sparse(&mut rng, blocks.groups(), 1, 2.0);
    let group = RiskProblem {
        design: LinearMap::dense(xg.clone()),
        penalty: PenaltyKind::GroupLasso { blocks },
        sigma: 1.0,
        observations: Observations::Synthetic { mu0: &xg * &g0 },
    };
    let u = unbiasedness("group", &group, 1.0, 10_000, 53);
    pass &= u.pass;
    parts.push(u.summary);

    let (x, _, _, mu0) = tv_instance(54, 8, 8, 1.0, 1.0, 1.0);
    let tv = RiskProblem {
        design: x,
        penalty: tv_kind(8, 8),
        sigma: 1.0,
        observations: Observations::Synthetic { mu0 },
    };
    let u = unbiasedness("tv8x8", &tv, 1.0, 2_000, 55);
    pass &= u.pass;
    parts.push(u.summary);

    let unbiased = start.elapsed();
    pass &= unbiased <= Duration::from_secs(1200);
    parts.push(format!("unbiasedness {:.0}s / 1200s", unbiased.as_secs_f64()));
    let start = Instant::now();
    parts.push(image_curve(&mut pass));
    let curve = start.elapsed();
    pass &= curve <= Duration::from_secs(600);
    parts.push(format!("curve {:.0}s / 600s", curve.as_secs_f64()));
    verdict(pass, parts.join("; "))
}

/// 16×16 deconvolution: blur of width 1.5, noise level 5 on a [0, 255]
/// piecewise-constant image, 40 realizations.
fn image_curve(pass: &mut bool) -> String {
    let (h, w) = (16, 16);
    let mut rng = seeds::rng(56, &[]);
    let img = generators::piecewise_constant(&mut rng, h, w, 5, 255.0).map(|v| v.min(255.0));
    let x = blur(h, w, 1.5);
    let mu0 = x.apply(&img).unwrap();
    let problem = RiskProblem {
        design: x,
        penalty: tv_kind(h, w),
        sigma: 5.0,
        observations: Observations::Synthetic { mu0 },
    };
    let grid = pssure::risk::lambda_grid(0.01, 1.0, 7, true);
    let curve = risk_curve(&problem, &grid, 40, 57, &CurveOptions::default()).unwrap();
    let (s, r) = (curve.sure_argmin().unwrap(), curve.risk_argmin().unwrap());
    let ok = s.abs_diff(r) <= 1 && curve.counts.iter().all(|&c| c == 40);
    *pass &= ok;
    let rm = curve.risk_mean.as_ref().unwrap();
    let pairs: Vec<String> = (0..grid.len()).map(|k| format!("{:.3}:{:.0}/{:.0}", grid[k], curve.sure_mean[k], rm[k])).collect();
    format!("16x16 curve argmin SURE {s} risk {r} [λ:SURE/risk {}]", pairs.join(" "))
}

fn ac6() -> Verdict {
    let (x, y, j, _) = tv_instance(61, 16, 16, 1.0, 0.5, 1.0);
    let r = solve_tight(&x, &y, &j);
    let m = &r.active;
    let rhs = seeds::normal_vector(&mut seeds::rng(62, &[]), m.dim);
    let dense = solve_saddle(&x, m, &rhs, &SaddleOptions { method: SaddleMethod::Dense, ..Default::default() }).unwrap();
    let kry = solve_saddle(&x, m, &rhs, &SaddleOptions { method: SaddleMethod::Krylov, ..Default::default() }).unwrap();
    let agree = rel(&kry.nu, &dense.nu);
    let off_tangent = (&kry.nu - m.project(&kry.nu)).norm() / kry.nu.norm();
    let nu_t = m.project(&kry.nu);
    let top = x.adjoint_apply(&x.apply(&nu_t).unwrap()).unwrap() + m.hessian_apply(&nu_t) + m.curvature_apply(&nu_t);
    let tangent_res = m.project(&(top - &rhs)).norm() / m.project(&rhs).norm();
    verdict(
        agree <= 1e-6 && kry.residual <= 1e-7 && r.converged,
        format!(
            "16x16 TV, tangent dim {}: |krylov−dense| {agree:.1e}, bordered residual {:.1e} ({} its), tangent residual {tangent_res:.1e}, ‖P_S ν‖ {off_tangent:.1e}",
            m.tangent_dim, kry.residual, kry.iterations
        ),
    )
}

fn shrinks(history: &[pssure::sensitivity::RepairStep]) -> bool {
    history.windows(2).all(|w| w[1].active_size < w[0].active_size && w[1].tangent_dim < w[0].tangent_dim)
}

/// Splits the mass of each block in `pairs` evenly with its duplicate. The
/// objective is unchanged because the duplicated columns coincide.
fn spread(x: &Vector, pairs: &[(Vec<usize>, Vec<usize>)]) -> Vector {
    let mut out = x.clone();
    for (a, b) in pairs {
        for (&i, &k) in a.iter().zip(b) {
            let m = 0.5 * (x[i] + x[k]);
            out[i] = m;
            out[k] = m;
        }
    }
    out
}

fn ac7() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut rng = seeds::rng(71, &[]);
    let base = gaussian_design(&mut rng, 6, 5);
    let mut xm = Matrix::zeros(6, 8);
    xm.columns_mut(0, 5).copy_from(&base);
    xm.columns_mut(5, 3).copy_from(&base.columns(0, 3));
    let y = &base * Vector::from_vec(vec![2.0, -1.5, 1.0, 0.0, 0.0]) + seeds::normal_vector(&mut rng, 6) * 0.1;
    let bg = gaussian_design(&mut rng, 8, 6);
    let mut xg = Matrix::zeros(8, 9);
    xg.columns_mut(0, 6).copy_from(&bg);
    xg.columns_mut(6, 3).copy_from(&bg.columns(0, 3));
    let yg = &bg * Vector::from_vec(vec![2.0, -1.0, 1.5, 0.5, 0.3, -0.2]) + seeds::normal_vector(&mut rng, 8) * 0.1;
    let group = Penalty::new(PenaltyKind::GroupLasso { blocks: Blocks::uniform(3, 3).unwrap() }, 0.3).unwrap();
    let cases: Vec<(&str, LinearMap, Vector, Penalty, Vec<(Vec<usize>, Vec<usize>)>)> = vec![
        (
            "lasso [1 1]",
            LinearMap::dense(Matrix::from_row_slice(1, 2, &[1.0, 1.0])),
            Vector::from_vec(vec![2.0]),
            Penalty::lasso(1.0),
            vec![(vec![0], vec![1])],
        ),
        ("lasso dup", LinearMap::dense(xm), y, Penalty::lasso(0.2), vec![(vec![0, 1, 2], vec![5, 6, 7])]),
        ("group dup", LinearMap::dense(xg), yg, group, vec![(vec![0, 1, 2], vec![6, 7, 8])]),
    ];
    for (name, x, y, j, pairs) in &cases {
        let loss = LossModel::squared(y.clone());
        let r = solve_tight(x, y, j);
        let start = evaluate(x, &loss, j, &spread(&r.x_hat, pairs), r.kkt_target).unwrap();
        let (before, _) = check_restricted_pd(x, &start.active).unwrap();
        let out = repair_solution(x, &loss, j, &start).unwrap();
        let (after, _) = check_restricted_pd(x, &out.result.active).unwrap();
        let dobj = (out.result.objective - start.objective).abs();
        let ok = !before && after && dobj <= 1e-9 && shrinks(&out.history) && out.history.len() >= 2;
        pass &= ok;
        let sizes: Vec<String> = out.history.iter().map(|s| s.active_size.to_string()).collect();
        parts.push(format!("{name}: active {} cinj {before}→{after} Δobj {dobj:.1e}", sizes.join("→")));
    }
    verdict(pass, parts.join("; "))
}

fn ac8() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    let opts = sensitivity_opts();
    for s in 0..4u64 {
        let mut rng = seeds::rng(81, &[s]);
        let (n, p) = (12, 5);
        let xm = gaussian_design(&mut rng, n, p);
        let mut xt = seeds::normal_vector(&mut rng, p);
        xt *= 2.0 / xt.norm();
        let y = &xm * xt + seeds::normal_vector(&mut rng, n) * 0.1;
        let x = LinearMap::dense(xm);
        let j = Penalty::new(PenaltyKind::SphereHinge, 4.0).unwrap();
        let loss = LossModel::squared(y.clone());
        let r = solve_tight(&x, &y, &j);
        let on = matches!(r.active.manifold_id, ManifoldId::Sphere(pssure::penalty::SphereRegion::On));
        let closed = closed_form_divergence(&x, &j, &r.active).unwrap().unwrap();
        let fd = divergence(
            &x,
            &loss,
            &j,
            &r,
            DivergenceMethod::FiniteDifference { eps: None, probes: 0, seed: 0, probe: ProbeKind::Canonical },
            &opts,
        )
        .unwrap()
        .divergence;
        let e = (closed - fd).abs() / closed.abs();
        pass &= on && r.certificate_margin > 0.0 && e <= 1e-3;
        parts.push(format!("closed {closed:.5} fd {fd:.5} ({e:.1e}, on sphere {on})"));
    }
    verdict(pass, parts.join("; "))
}

fn ac9() -> Verdict {
    let (p1, p2) = (5, 5);
    let mut rng = seeds::rng(91, &[]);
    let l = seeds::normal_vector(&mut rng, p1 * 2);
    let rt = seeds::normal_vector(&mut rng, p2 * 2);
    let low = Matrix::from_column_slice(p1, 2, l.as_slice()) * Matrix::from_column_slice(p2, 2, rt.as_slice()).transpose();
    let n = 40;
    let xm = gaussian_design(&mut rng, n, p1 * p2);
    let y = &xm * mat_to_vec(&low) + seeds::normal_vector(&mut rng, n) * 0.3;
    let x = LinearMap::dense(xm.clone());
    let lambda = 0.3 * vec_to_mat(&(xm.transpose() * &y), p1, p2).singular_values().max();
    let j = Penalty::new(PenaltyKind::Nuclear { rows: p1, cols: p2 }, lambda).unwrap();
    let loss = LossModel::squared(y.clone());
    let r = solve_tight(&x, &y, &j);
    let m = &r.active;

    let (u, v) = {
        let svd = vec_to_mat(&r.x_hat, p1, p2).svd(true, true);
        let rank = match m.manifold_id {
            ManifoldId::Rank(k) => k,
            _ => 0,
        };
        let mut idx: Vec<usize> = (0..p1.min(p2)).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = Matrix::from_columns(&idx[..rank].iter().map(|&k| svd.u.as_ref().unwrap().column(k).into_owned()).collect::<Vec<_>>());
        let vt = svd.v_t.as_ref().unwrap();
        let v = Matrix::from_columns(&idx[..rank].iter().map(|&k| vt.row(k).transpose()).collect::<Vec<_>>());
        (u, v)
    };
    let mut proj_err: f64 = 0.0;
    let mut sym_err: f64 = 0.0;
    for t in 0..20u64 {
        let mut rr = seeds::rng(92, &[t]);
        let wm = Matrix::from_column_slice(p1, p2, seeds::normal_vector(&mut rr, p1 * p2).as_slice());
        let uu = &u * u.transpose();
        let vv = &v * v.transpose();
        let expected = &uu * &wm + &wm * &vv - &uu * &wm * &vv;
        let got = vec_to_mat(&m.project(&mat_to_vec(&wm)), p1, p2);
        proj_err = proj_err.max((got - &expected).norm() / expected.norm());
        let xi = m.project(&seeds::normal_vector(&mut rr, p1 * p2));
        let eta = m.project(&seeds::normal_vector(&mut rr, p1 * p2));
        let a = m.hessian_apply(&xi).dot(&eta);
        let b = xi.dot(&m.hessian_apply(&eta));
        sym_err = sym_err.max((a - b).abs() / (m.hessian_apply(&xi).norm() * eta.norm()).max(f64::MIN_POSITIVE));
    }
    let (cinj, min) = check_restricted_pd(&x, m).unwrap();
    let opts = sensitivity_opts();
    let exact = DeltaOperator::new(&x, m, &SaddleOptions::default()).unwrap().exact_trace().unwrap();
    let fd = divergence(
        &x,
        &loss,
        &j,
        &r,
        DivergenceMethod::FiniteDifference { eps: None, probes: 0, seed: 0, probe: ProbeKind::Canonical },
        &opts,
    )
    .unwrap()
    .divergence;
    let e = (exact - fd).abs() / exact.abs();
    verdict(
        proj_err <= 1e-8 && sym_err <= 1e-8 && cinj && e <= 1e-3 && r.certificate_margin > 0.0,
        format!(
            "{:?}, P_T error {proj_err:.1e}, Q asymmetry {sym_err:.1e}, cinj {cinj} (min eig {min:.2e}), trace {exact:.4} vs fd {fd:.4} ({e:.1e}), margin {:.3}",
            m.manifold_id, r.certificate_margin
        ),
    )
}

fn main() {
    let _ = MATERIALIZE_CAP;
    let criteria: [(&str, &str, Duration, fn() -> Verdict); 9] = [
        ("AC1", "adjoint suite", Duration::from_secs(5), ac1),
        ("AC2", "lasso closed-form DOF", Duration::from_secs(60), ac2),
        ("AC3", "Jacobian vs finite differences", Duration::from_secs(300), ac3),
        ("AC4", "divergence cross-method agreement", Duration::from_secs(300), ac4),
        ("AC5", "SURE unbiasedness and risk curve", Duration::from_secs(1800), ac5),
        ("AC6", "saddle system Krylov vs dense", Duration::from_secs(60), ac6),
        ("AC7", "solution repair", Duration::from_secs(10), ac7),
        ("AC8", "sphere hinge divergence", Duration::from_secs(60), ac8),
        ("AC9", "nuclear norm", Duration::from_secs(120), ac9),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let ok = v.pass && elapsed <= budget;
        if !ok {
            failed += 1;
        }
        println!(
            "{id} {} {name}: {} [{:.1}s / {}s]",
            if ok { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
