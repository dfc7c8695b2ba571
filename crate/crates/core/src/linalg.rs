//! Dense linear-algebra helpers shared by the penalty, solver and
//! sensitivity modules.

use nalgebra::SymmetricEigen;

use crate::{Matrix, Vector};

/// Rank-revealing factorization `A = U diag(s) Vᵀ` of an `m × p` matrix,
/// together with an orthonormal basis of `Ker(A)`.
#[derive(Clone, Debug)]
pub struct RankFactor {
    /// Left singular vectors of the retained (numerically nonzero) part, `m × k`.
    pub u: Matrix,
    /// Retained singular values in non-increasing order.
    pub s: Vec<f64>,
    /// Right singular vectors of the retained part, `p × k`.
    pub v: Matrix,
    /// Orthonormal basis of the numerical kernel, `p × (p − k)`.
    pub kernel: Matrix,
}

impl RankFactor {
    /// Factorizes `a`, treating singular values `≤ rel_cut · σ_max` as zero.
    pub fn new(a: &Matrix, rel_cut: f64) -> Self {
        let (m, p) = a.shape();
        if p == 0 {
            return Self {
                u: Matrix::zeros(m, 0),
                s: Vec::new(),
                v: Matrix::zeros(0, 0),
                kernel: Matrix::zeros(0, 0),
            };
        }
        if m == 0 {
            return Self {
                u: Matrix::zeros(0, 0),
                s: Vec::new(),
                v: Matrix::zeros(p, 0),
                kernel: Matrix::identity(p, p),
            };
        }
        // Pad with zero rows so that the thin SVD exposes a full set of
        // right singular vectors.
        let padded = if m < p {
            let mut b = Matrix::zeros(p, p);
            b.view_mut((0, 0), (m, p)).copy_from(a);
            b
        } else {
            a.clone()
        };
        let svd = padded.svd(true, true);
        let u_full = svd.u.expect("left singular vectors requested");
        let vt = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| {
            svd.singular_values[j]
                .partial_cmp(&svd.singular_values[i])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let smax = order.first().map_or(0.0, |&i| svd.singular_values[i]);
        let cut = rel_cut * smax;
        let keep: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| svd.singular_values[i] > cut && svd.singular_values[i] > 0.0)
            .collect();
        let drop: Vec<usize> = order.iter().copied().filter(|i| !keep.contains(i)).collect();
        let k = keep.len();
        let mut u = Matrix::zeros(m, k);
        let mut v = Matrix::zeros(p, k);
        let mut s = Vec::with_capacity(k);
        for (c, &i) in keep.iter().enumerate() {
            u.set_column(c, &u_full.column(i).rows(0, m));
            v.set_column(c, &vt.row(i).transpose());
            s.push(svd.singular_values[i]);
        }
        let mut kernel = Matrix::zeros(p, drop.len());
        for (c, &i) in drop.iter().enumerate() {
            let mut col = vt.row(i).transpose();
            normalize_sign(&mut col);
            kernel.set_column(c, &col);
        }
        Self { u, s, v, kernel }
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Minimum-norm least-squares solution of `A x = b`.
    pub fn pinv_apply(&self, b: &Vector) -> Vector {
        let mut coef = self.u.tr_mul(b);
        for (c, s) in coef.iter_mut().zip(&self.s) {
            *c /= s;
        }
        &self.v * coef
    }
}

/// Flips the sign of `v` so that its largest-magnitude entry is positive.
pub fn normalize_sign(v: &mut Vector) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best + 1e-12 {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in ascending order.
pub fn sym_eigen(m: &Matrix) -> (Vec<f64>, Matrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), Matrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix through its
/// eigendecomposition.
#[derive(Clone, Debug)]
pub struct SymPinv {
    values: Vec<f64>,
    vectors: Matrix,
    cutoff: f64,
}

impl SymPinv {
    /// Eigenvalues `≤ rel_cut · λ_max` are treated as zero.
    pub fn new(m: &Matrix, rel_cut: f64) -> Self {
        let (values, vectors) = sym_eigen(m);
        let lmax = values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        Self {
            values,
            vectors,
            cutoff: rel_cut * lmax,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        self.values.iter().filter(|&&v| v > self.cutoff).count()
    }

    pub fn apply(&self, b: &Vector) -> Vector {
        let mut coef = self.vectors.tr_mul(b);
        for (c, &v) in coef.iter_mut().zip(&self.values) {
            *c = if v > self.cutoff { *c / v } else { 0.0 };
        }
        &self.vectors * coef
    }

    /// Dense pseudo-inverse matrix.
    pub fn matrix(&self) -> Matrix {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        for (c, &v) in self.values.iter().enumerate() {
            let f = if v > self.cutoff { 1.0 / v } else { 0.0 };
            scaled.column_mut(c).scale_mut(f);
        }
        if n == 0 {
            return Matrix::zeros(0, 0);
        }
        scaled * self.vectors.transpose()
    }
}

/// Splits a symmetric idempotent matrix into orthonormal bases of its range
/// and of its orthogonal complement.
pub fn projector_split(p: &Matrix) -> (Matrix, Matrix) {
    let n = p.nrows();
    let (values, vectors) = sym_eigen(p);
    let range: Vec<usize> = (0..n).filter(|&i| values[i] > 0.5).collect();
    let comp: Vec<usize> = (0..n).filter(|&i| values[i] <= 0.5).collect();
    let pick = |idx: &[usize]| {
        let mut m = Matrix::zeros(n, idx.len());
        for (c, &i) in idx.iter().rev().enumerate() {
            let mut col = vectors.column(i).into_owned();
            normalize_sign(&mut col);
            m.set_column(c, &col);
        }
        m
    };
    (pick(&range), pick(&comp))
}

/// Orthonormal basis of the complement of the span of an orthonormal basis.
pub fn orthonormal_complement(basis: &Matrix, dim: usize) -> Matrix {
    if basis.ncols() == 0 {
        return Matrix::identity(dim, dim);
    }
    let proj = Matrix::identity(dim, dim) - basis * basis.transpose();
    projector_split(&proj).0
}

/// Euclidean projection onto the simplex `{w ≥ 0, Σ w = radius}`.
pub fn project_simplex(v: &[f64], radius: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - radius) / (k as f64 + 1.0);
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Euclidean projection onto the ℓ₁ ball of the given radius.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let w = project_simplex(&mags, radius);
    v.iter().zip(w).map(|(&x, m)| m * x.signum()).collect()
}
