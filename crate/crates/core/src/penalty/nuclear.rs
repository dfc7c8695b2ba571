//! Nuclear norm of a matrix stored column-major in a vector.

use super::{finish_margin, ActiveModel, Certificate, ManifoldId, Structure};
use crate::linalg::projector_split;
use crate::{Matrix, Vector};

/// Relative gap below which two singular values count as repeated.
const REPEAT_RTOL: f64 = 1e-8;

pub fn vec_to_mat(x: &Vector, rows: usize, cols: usize) -> Matrix {
    Matrix::from_column_slice(rows, cols, x.as_slice())
}

pub fn mat_to_vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Thin SVD with singular values in non-increasing order.
pub(crate) fn sorted_svd(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let k = order.len();
    let mut us = Matrix::zeros(m.nrows(), k);
    let mut vs = Matrix::zeros(m.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (c, &i) in order.iter().enumerate() {
        us.set_column(c, &u.column(i));
        vs.set_column(c, &vt.row(i).transpose());
        s.push(svd.singular_values[i]);
    }
    (us, s, vs)
}

pub(crate) fn prox(v: &Vector, rows: usize, cols: usize, t: f64) -> Vector {
    let (u, s, w) = sorted_svd(&vec_to_mat(v, rows, cols));
    let mut out = Matrix::zeros(rows, cols);
    for (i, &si) in s.iter().enumerate() {
        let shrunk = si - t;
        if shrunk > 0.0 {
            out += u.column(i) * w.column(i).transpose() * shrunk;
        }
    }
    mat_to_vec(&out)
}

fn tangent_project(u: &Matrix, v: &Matrix, w: &Matrix) -> Matrix {
    let uu = u * u.transpose();
    let vv = v * v.transpose();
    &uu * w + w * &vv - &uu * w * &vv
}

/// `U V*` of the rank-`r` truncation of `m`.
#[cfg(test)]
fn polar_factor(m: &Matrix, r: usize) -> (Matrix, Matrix, Matrix) {
    let (u, _, v) = sorted_svd(m);
    let ur = u.columns(0, r).into_owned();
    let vr = v.columns(0, r).into_owned();
    let uv = &ur * vr.transpose();
    (uv, ur, vr)
}

pub(crate) fn identify(lambda: f64, x: &Vector, rows: usize, cols: usize, tol: f64) -> ActiveModel {
    let (_, s, _) = sorted_svd(&vec_to_mat(x, rows, cols));
    let r = s.iter().filter(|&&si| si > tol).count();
    identify_rank(lambda, x, rows, cols, r, tol)
}

/// Model at `x` on the manifold of rank-`r` matrices; `tol` only feeds the
/// ambiguity flag.
pub(crate) fn identify_rank(lambda: f64, x: &Vector, rows: usize, cols: usize, r: usize, tol: f64) -> ActiveModel {
    let m = vec_to_mat(x, rows, cols);
    let (u, s, v) = sorted_svd(&m);
    let ur = u.columns(0, r).into_owned();
    let vr = v.columns(0, r).into_owned();
    let sr: Vec<f64> = s[..r].to_vec();
    let smax = s.first().copied().unwrap_or(0.0);
    let repeated = sr.windows(2).any(|w| w[0] - w[1] <= REPEAT_RTOL * smax);
    let ambiguous = s.iter().any(|&si| si > 0.5 * tol && si < 2.0 * tol);

    let p = rows * cols;
    let mut proj = Matrix::zeros(p, p);
    let mut e = Matrix::zeros(rows, cols);
    for j in 0..p {
        e[j] = 1.0;
        proj.set_column(j, &mat_to_vec(&tangent_project(&ur, &vr, &e)));
        e[j] = 0.0;
    }
    let basis = if r == 0 { Matrix::zeros(p, 0) } else { projector_split(&proj).0 };
    let e_x = mat_to_vec(&(&ur * vr.transpose())) * lambda;

    let k = basis.ncols();
    let mut hessian = Matrix::zeros(k, k);
    for j in 0..k {
        let xi = vec_to_mat(&basis.column(j).into_owned(), rows, cols);
        let d = polar_derivative(&ur, &sr, &vr, &xi) * lambda;
        hessian.set_column(j, &basis.tr_mul(&mat_to_vec(&d)));
    }
    let mut model = ActiveModel::new(
        lambda,
        x.clone(),
        ManifoldId::Rank(r),
        basis,
        e_x,
        hessian,
        Structure::Nuclear {
            rows,
            cols,
            u: ur,
            s: sr,
            v: vr,
        },
    );
    model.degenerate = repeated || ambiguous;
    model
}

/// Derivative of `U V*` along a tangent direction `ξ` of the rank-`r`
/// manifold at `U Σ V*`:
/// `U Ω V* + P_U⊥ ξ V Σ⁻¹ V* + U Σ⁻¹ U* ξ P_V⊥` with
/// `Ω_ij = (a_ij − a_ji) / (σ_i + σ_j)`, `a = U* ξ V`.
fn polar_derivative(u: &Matrix, s: &[f64], v: &Matrix, xi: &Matrix) -> Matrix {
    let r = s.len();
    let a = u.transpose() * xi * v;
    let omega = Matrix::from_fn(r, r, |i, j| (a[(i, j)] - a[(j, i)]) / (s[i] + s[j]));
    let inv = Matrix::from_diagonal(&Vector::from_iterator(r, s.iter().map(|si| 1.0 / si)));
    let up = xi * v - u * &a;
    let vp = xi.transpose() * u - v * a.transpose();
    u * omega * v.transpose() + up * &inv * v.transpose() + u * inv * vp.transpose()
}

/// Weingarten map of the fixed-rank manifold at `x = U Σ V*`:
/// `A(ξ, W) = W ξ* (x⁺)* + (x⁺)* ξ* W` with `(x⁺)* = U Σ⁻¹ V*`.
pub(crate) fn weingarten(
    rows: usize,
    cols: usize,
    u: &Matrix,
    s: &[f64],
    v: &Matrix,
    xi: &Vector,
    w: &Vector,
) -> Vector {
    let xi = vec_to_mat(xi, rows, cols);
    let w = vec_to_mat(w, rows, cols);
    let mut scaled = u.clone();
    for (c, &si) in s.iter().enumerate() {
        scaled.column_mut(c).scale_mut(1.0 / si);
    }
    let pinv_t = scaled * v.transpose();
    let out = &w * xi.transpose() * &pinv_t + &pinv_t * xi.transpose() * &w;
    mat_to_vec(&out)
}

pub(crate) fn certificate(lambda: f64, model: &ActiveModel, rows: usize, cols: usize, g: &Vector) -> Certificate {
    let (u, v) = match &model.structure {
        Structure::Nuclear { u, v, .. } => (u, v),
        _ => unreachable!("nuclear structure"),
    };
    let gm = vec_to_mat(g, rows, cols);
    let on = tangent_project(u, v, &gm);
    let mismatch = (&on - u * v.transpose() * lambda).norm();
    let normal = &gm - &on;
    let sv = normal.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let excess: f64 = sv.iter().map(|&si| (si - lambda).max(0.0).powi(2)).sum();
    let margin = if lambda > 0.0 { 1.0 - smax / lambda } else { 1.0 };
    Certificate {
        margin: finish_margin(margin, mismatch, lambda),
        kkt: (mismatch * mismatch + excess).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn random_low_rank(seed: u64, n: usize, r: usize) -> Matrix {
        let mut rng = seeds::rng(seed, &[]);
        let a = Matrix::from_column_slice(n, r, seeds::normal_vector(&mut rng, n * r).as_slice());
        let b = Matrix::from_column_slice(n, r, seeds::normal_vector(&mut rng, n * r).as_slice());
        a * b.transpose()
    }

    #[test]
    fn projector_matches_formula() {
        let m = random_low_rank(1, 5, 2);
        let model = identify(1.0, &mat_to_vec(&m), 5, 5, 1e-8);
        assert_eq!(model.tangent_dim, (5 + 5 - 2) * 2);
        let (u, s, v) = sorted_svd(&m);
        assert!(s[2] < 1e-10);
        let (u, v) = (u.columns(0, 2).into_owned(), v.columns(0, 2).into_owned());
        let mut rng = seeds::rng(2, &[]);
        let w = Matrix::from_column_slice(5, 5, seeds::normal_vector(&mut rng, 25).as_slice());
        let direct = mat_to_vec(&tangent_project(&u, &v, &w));
        assert!((model.project(&mat_to_vec(&w)) - direct).norm() < 1e-10);
    }

    #[test]
    fn weingarten_matches_projector_derivative() {
        let m = random_low_rank(3, 4, 2);
        let model = identify(1.0, &mat_to_vec(&m), 4, 4, 1e-8);
        let mut rng = seeds::rng(4, &[]);
        let xi = model.project(&seeds::normal_vector(&mut rng, 16));
        let z = seeds::normal_vector(&mut rng, 16);
        let w = &z - model.project(&z);
        let (u, s, v) = match &model.structure {
            Structure::Nuclear { u, s, v, .. } => (u.clone(), s.clone(), v.clone()),
            _ => unreachable!(),
        };
        let analytic = model.project(&weingarten(4, 4, &u, &s, &v, &xi, &w));
        let h = 1e-6;
        let proj_at = |t: f64| {
            let (_, ur, vr) = polar_factor(&(&m + vec_to_mat(&xi, 4, 4) * t), 2);
            mat_to_vec(&tangent_project(&ur, &vr, &vec_to_mat(&w, 4, 4)))
        };
        let fd = model.project(&((proj_at(h) - proj_at(-h)) / (2.0 * h)));
        assert!((&analytic - &fd).norm() <= 1e-6 * (1.0 + analytic.norm()));
    }

    #[test]
    fn polar_derivative_matches_differences_on_wide_matrices() {
        let mut rng = seeds::rng(3, &[]);
        let a = Matrix::from_column_slice(3, 2, seeds::normal_vector(&mut rng, 6).as_slice());
        let b = Matrix::from_column_slice(4, 2, seeds::normal_vector(&mut rng, 8).as_slice());
        let m = a * b.transpose();
        let model = identify(1.0, &mat_to_vec(&m), 3, 4, 1e-8);
        let Structure::Nuclear { u, s, v, .. } = &model.structure else { unreachable!() };
        let xi = vec_to_mat(&model.basis.column(3).into_owned(), 3, 4);
        let h = 1e-5;
        let diff = (polar_factor(&(&m + &xi * h), 2).0 - polar_factor(&(&m - &xi * h), 2).0) / (2.0 * h);
        let fd = tangent_project(u, v, &diff);
        let an = polar_derivative(u, s, v, &xi);
        assert!((&an - &fd).norm() <= 1e-6 * fd.norm(), "{:e}", (&an - &fd).norm());
        let q = &model.hessian;
        assert!((q - q.transpose()).amax() < 1e-12 * (1.0 + q.amax()));
    }

    #[test]
    fn hessian_is_symmetric_on_tangent_space() {
        let m = random_low_rank(5, 5, 2);
        let model = identify(0.7, &mat_to_vec(&m), 5, 5, 1e-8);
        let q = &model.hessian;
        assert!((q - q.transpose()).amax() < 1e-8 * (1.0 + q.amax()));
    }

    #[test]
    fn repeated_singular_values_are_flagged() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 2.0, 0.0]));
        assert!(identify(1.0, &mat_to_vec(&m), 3, 3, 1e-8).degenerate);
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 2.0, 0.0]));
        assert!(!identify(1.0, &mat_to_vec(&m), 3, 3, 1e-8).degenerate);
    }

    #[test]
    fn svt_shrinks_singular_values() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 0.5]));
        let out = vec_to_mat(&prox(&mat_to_vec(&m), 2, 2, 1.0), 2, 2);
        assert!((out - Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]))).norm() < 1e-12);
    }
}
