//! Linear operators with exact adjoints.
//!
//! [`LinearMap`] covers the designs `X` and analysis operators `D*` used by
//! the rest of the crate. Every kind evaluates both `A x` and `A* z` without
//! forming a matrix; [`LinearMap::materialize`] builds the dense matrix for
//! small problems.

mod conv;
mod grad;

use std::sync::Arc;

use thiserror::Error;

pub use conv::Conv2d;
pub use grad::{divergence2d, Grad2d};

use crate::{Matrix, Vector};

/// Default cap on `rows · cols` for [`LinearMap::materialize`].
pub const MATERIALIZE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinopError {
    #[error("dimension mismatch: expected length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("materialization of a {rows}x{cols} operator exceeds the cap of {cap} entries")]
    CapExceeded { rows: usize, cols: usize, cap: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("index {index} out of range for dimension {dim}")]
    InvalidIndex { index: usize, dim: usize },
}

/// Row selection `x ↦ (x[i])_{i ∈ idx}` from a vector of length `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subsample {
    pub dim: usize,
    pub indices: Vec<usize>,
}

/// Stacked restrictions `x ↦ (x_{b₁}, x_{b₂}, …)`; blocks may overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockExtractor {
    pub dim: usize,
    pub blocks: Vec<Vec<usize>>,
}

impl BlockExtractor {
    pub fn rows(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

/// A linear operator `A : R^cols → R^rows`.
#[derive(Clone, Debug)]
pub enum LinearMap {
    Identity(usize),
    Dense(Arc<Matrix>),
    Conv2d(Arc<Conv2d>),
    Subsample(Arc<Subsample>),
    Grad2d(Grad2d),
    BlockExtractor(Arc<BlockExtractor>),
    /// `Compose(A, B)` is `A ∘ B`: `B` is applied first.
    Compose(Arc<LinearMap>, Arc<LinearMap>),
    Adjoint(Arc<LinearMap>),
}

impl LinearMap {
    pub fn identity(n: usize) -> Self {
        Self::Identity(n)
    }

    pub fn dense(m: Matrix) -> Self {
        Self::Dense(Arc::new(m))
    }

    pub fn conv2d(c: Conv2d) -> Self {
        Self::Conv2d(Arc::new(c))
    }

    pub fn grad2d(height: usize, width: usize) -> Self {
        Self::Grad2d(Grad2d::new(height, width))
    }

    pub fn subsample(dim: usize, indices: Vec<usize>) -> Result<Self, LinopError> {
        if let Some(&index) = indices.iter().find(|&&i| i >= dim) {
            return Err(LinopError::InvalidIndex { index, dim });
        }
        Ok(Self::Subsample(Arc::new(Subsample { dim, indices })))
    }

    pub fn block_extractor(dim: usize, blocks: Vec<Vec<usize>>) -> Result<Self, LinopError> {
        for b in &blocks {
            if let Some(&index) = b.iter().find(|&&i| i >= dim) {
                return Err(LinopError::InvalidIndex { index, dim });
            }
        }
        Ok(Self::BlockExtractor(Arc::new(BlockExtractor { dim, blocks })))
    }

    /// `a ∘ b`, checking that the inner dimensions agree.
    pub fn compose(a: LinearMap, b: LinearMap) -> Result<Self, LinopError> {
        if a.cols() != b.rows() {
            return Err(LinopError::DimensionMismatch {
                expected: a.cols(),
                found: b.rows(),
            });
        }
        Ok(Self::Compose(Arc::new(a), Arc::new(b)))
    }

    pub fn adjoint(&self) -> Self {
        match self {
            Self::Adjoint(inner) => (**inner).clone(),
            Self::Identity(n) => Self::Identity(*n),
            other => Self::Adjoint(Arc::new(other.clone())),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Self::Identity(n) => *n,
            Self::Dense(m) => m.nrows(),
            Self::Conv2d(c) => c.height() * c.width(),
            Self::Subsample(s) => s.indices.len(),
            Self::Grad2d(g) => 2 * g.pixels(),
            Self::BlockExtractor(b) => b.rows(),
            Self::Compose(a, _) => a.rows(),
            Self::Adjoint(a) => a.cols(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Self::Identity(n) => *n,
            Self::Dense(m) => m.ncols(),
            Self::Conv2d(c) => c.height() * c.width(),
            Self::Subsample(s) => s.dim,
            Self::Grad2d(g) => g.pixels(),
            Self::BlockExtractor(b) => b.dim,
            Self::Compose(_, b) => b.cols(),
            Self::Adjoint(a) => a.rows(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity(_))
    }

    /// `A x`.
    pub fn apply(&self, x: &Vector) -> Result<Vector, LinopError> {
        check(self.cols(), x.len())?;
        Ok(self.apply_unchecked(x))
    }

    /// `A* z`.
    pub fn adjoint_apply(&self, z: &Vector) -> Result<Vector, LinopError> {
        check(self.rows(), z.len())?;
        Ok(self.adjoint_unchecked(z))
    }

    pub(crate) fn apply_unchecked(&self, x: &Vector) -> Vector {
        match self {
            Self::Identity(_) => x.clone(),
            Self::Dense(m) => &**m * x,
            Self::Conv2d(c) => {
                let mut out = Vector::zeros(x.len());
                c.apply_into(x, &mut out, false);
                out
            }
            Self::Subsample(s) => Vector::from_iterator(s.indices.len(), s.indices.iter().map(|&i| x[i])),
            Self::Grad2d(g) => {
                let mut out = Vector::zeros(2 * g.pixels());
                g.apply_into(x, &mut out);
                out
            }
            Self::BlockExtractor(b) => Vector::from_iterator(
                b.rows(),
                b.blocks.iter().flat_map(|blk| blk.iter().map(|&i| x[i])),
            ),
            Self::Compose(a, b) => a.apply_unchecked(&b.apply_unchecked(x)),
            Self::Adjoint(a) => a.adjoint_unchecked(x),
        }
    }

    pub(crate) fn adjoint_unchecked(&self, z: &Vector) -> Vector {
        match self {
            Self::Identity(_) => z.clone(),
            Self::Dense(m) => m.tr_mul(z),
            Self::Conv2d(c) => {
                let mut out = Vector::zeros(z.len());
                c.apply_into(z, &mut out, true);
                out
            }
            Self::Subsample(s) => {
                let mut out = Vector::zeros(s.dim);
                for (k, &i) in s.indices.iter().enumerate() {
                    out[i] += z[k];
                }
                out
            }
            Self::Grad2d(g) => {
                let mut out = Vector::zeros(g.pixels());
                g.adjoint_into(z, &mut out);
                out
            }
            Self::BlockExtractor(b) => {
                let mut out = Vector::zeros(b.dim);
                let mut k = 0;
                for blk in &b.blocks {
                    for &i in blk {
                        out[i] += z[k];
                        k += 1;
                    }
                }
                out
            }
            Self::Compose(a, b) => b.adjoint_unchecked(&a.adjoint_unchecked(z)),
            Self::Adjoint(a) => a.apply_unchecked(z),
        }
    }

    /// Dense matrix of the operator, with the default cap.
    pub fn materialize(&self) -> Result<Matrix, LinopError> {
        self.materialize_with_cap(MATERIALIZE_CAP)
    }

    pub fn materialize_with_cap(&self, cap: usize) -> Result<Matrix, LinopError> {
        let (rows, cols) = (self.rows(), self.cols());
        if rows.saturating_mul(cols) > cap {
            return Err(LinopError::CapExceeded { rows, cols, cap });
        }
        if let Self::Dense(m) = self {
            return Ok((**m).clone());
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut e = Vector::zeros(cols);
        for j in 0..cols {
            e[j] = 1.0;
            out.set_column(j, &self.apply_unchecked(&e));
            e[j] = 0.0;
        }
        Ok(out)
    }

    /// `A M` for a dense `M` with `cols` rows, column by column.
    pub fn apply_matrix(&self, m: &Matrix) -> Result<Matrix, LinopError> {
        check(self.cols(), m.nrows())?;
        if let Self::Dense(a) = self {
            return Ok(&**a * m);
        }
        let mut out = Matrix::zeros(self.rows(), m.ncols());
        for j in 0..m.ncols() {
            out.set_column(j, &self.apply_unchecked(&m.column(j).into_owned()));
        }
        Ok(out)
    }

    /// `A* M` for a dense `M` with `rows` rows.
    pub fn adjoint_apply_matrix(&self, m: &Matrix) -> Result<Matrix, LinopError> {
        check(self.rows(), m.nrows())?;
        if let Self::Dense(a) = self {
            return Ok(a.tr_mul(m));
        }
        let mut out = Matrix::zeros(self.cols(), m.ncols());
        for j in 0..m.ncols() {
            out.set_column(j, &self.adjoint_unchecked(&m.column(j).into_owned()));
        }
        Ok(out)
    }

    /// Estimate of the spectral norm `‖A‖` by power iteration on `A* A`.
    pub fn norm_estimate(&self, iterations: usize) -> f64 {
        let n = self.cols();
        if n == 0 || self.rows() == 0 {
            return 0.0;
        }
        if self.is_identity() {
            return 1.0;
        }
        let mut v = Vector::from_iterator(n, (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0));
        v /= v.norm();
        let mut est = 0.0;
        for _ in 0..iterations.max(1) {
            let w = self.adjoint_unchecked(&self.apply_unchecked(&v));
            let nw = w.norm();
            if nw == 0.0 {
                return 0.0;
            }
            est = nw;
            v = w / nw;
        }
        est.sqrt()
    }
}

fn check(expected: usize, found: usize) -> Result<(), LinopError> {
    if expected == found {
        Ok(())
    } else {
        Err(LinopError::DimensionMismatch { expected, found })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn adjoint_gap(a: &LinearMap, seed: u64) -> f64 {
        let mut rng = seeds::rng(seed, &[]);
        let x = seeds::normal_vector(&mut rng, a.cols());
        let z = seeds::normal_vector(&mut rng, a.rows());
        let ax = a.apply(&x).unwrap();
        let atz = a.adjoint_apply(&z).unwrap();
        (ax.dot(&z) - x.dot(&atz)).abs() / (ax.norm() * z.norm()).max(1e-300)
    }

    #[test]
    fn identity_apply() {
        let x = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(LinearMap::identity(3).apply(&x).unwrap(), x);
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let g = LinearMap::grad2d(4, 3);
        let out = g.apply(&Vector::from_element(12, 2.5)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_of_row_constant_image() {
        let g = LinearMap::grad2d(3, 4);
        let x = Vector::from_iterator(12, (0..12).map(|k| (k / 4) as f64));
        let out = g.apply(&x).unwrap();
        for k in 0..12 {
            assert_eq!(out[2 * k], 0.0);
        }
        assert!(out.iter().skip(1).step_by(2).any(|&v| v != 0.0));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let c = LinearMap::conv2d(Conv2d::new(4, 5, &[1.0], 1, 1).unwrap());
        let x = Vector::from_iterator(20, (0..20).map(|k| k as f64));
        assert_eq!(c.apply(&x).unwrap(), x);
    }

    #[test]
    fn grad_adjoint_is_negative_divergence() {
        let g = LinearMap::grad2d(4, 4);
        let dense = g.materialize().unwrap();
        let mut rng = seeds::rng(3, &[]);
        let f = seeds::normal_vector(&mut rng, 32);
        let div = divergence2d(4, 4, &f);
        let via_matrix = dense.tr_mul(&f);
        assert!((via_matrix + &div).norm() < 1e-12);
        assert!((g.adjoint_apply(&f).unwrap() + div).norm() < 1e-12);
    }

    #[test]
    fn subsample_adjoint_zero_fills() {
        let s = LinearMap::subsample(4, vec![2, 0]).unwrap();
        let out = s.adjoint_apply(&Vector::from_vec(vec![5.0, 7.0])).unwrap();
        assert_eq!(out.as_slice(), &[7.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn materialize_identity() {
        assert_eq!(LinearMap::identity(2).materialize().unwrap(), Matrix::identity(2, 2));
    }

    #[test]
    fn materialize_composition_and_adjoint() {
        let mut rng = seeds::rng(9, &[]);
        let a = Matrix::from_fn(3, 4, |_, _| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng));
        let b = Matrix::from_fn(4, 2, |_, _| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng));
        let ab = LinearMap::compose(LinearMap::dense(a.clone()), LinearMap::dense(b.clone())).unwrap();
        assert!((ab.materialize().unwrap() - &a * &b).norm() < 1e-12);
        let at = LinearMap::dense(a.clone()).adjoint();
        assert_eq!(at.materialize().unwrap(), a.transpose());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = LinearMap::identity(3).apply(&Vector::zeros(2)).unwrap_err();
        assert_eq!(err, LinopError::DimensionMismatch { expected: 3, found: 2 });
        assert!(LinearMap::compose(LinearMap::identity(3), LinearMap::identity(2)).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let g = LinearMap::grad2d(10, 10);
        assert!(matches!(
            g.materialize_with_cap(100),
            Err(LinopError::CapExceeded { rows: 200, cols: 100, cap: 100 })
        ));
    }

    #[test]
    fn spectral_matches_spatial() {
        let spatial = Conv2d::gaussian(9, 7, 1.5).unwrap();
        let spectral = spatial.clone().with_spectral();
        let (a, b) = (LinearMap::conv2d(spatial), LinearMap::conv2d(spectral));
        let mut rng = seeds::rng(11, &[]);
        let x = seeds::normal_vector(&mut rng, 63);
        let d1 = a.apply(&x).unwrap() - b.apply(&x).unwrap();
        let d2 = a.adjoint_apply(&x).unwrap() - b.adjoint_apply(&x).unwrap();
        assert!(d1.amax() < 1e-12 * x.amax());
        assert!(d2.amax() < 1e-12 * x.amax());
    }

    #[test]
    fn gaussian_kernel_preserves_constants() {
        let c = LinearMap::conv2d(Conv2d::gaussian(6, 6, 1.5).unwrap());
        let out = c.apply(&Vector::from_element(36, 3.0)).unwrap();
        assert!(out.iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn norm_estimate_of_diagonal() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 3.0, 2.0]));
        let est = LinearMap::dense(m).norm_estimate(200);
        assert!((est - 3.0).abs() < 1e-8);
    }

    #[test]
    fn every_kind_has_a_consistent_adjoint() {
        let mut rng = seeds::rng(1, &[]);
        let dense = Matrix::from_fn(5, 6, |_, _| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng));
        let conv = LinearMap::conv2d(Conv2d::gaussian(4, 5, 1.0).unwrap());
        let maps = vec![
            LinearMap::identity(6),
            LinearMap::dense(dense),
            conv.clone(),
            LinearMap::subsample(20, vec![1, 4, 7, 19]).unwrap(),
            LinearMap::grad2d(4, 5),
            LinearMap::block_extractor(6, vec![vec![0, 1], vec![1, 5], vec![3]]).unwrap(),
            LinearMap::compose(LinearMap::subsample(20, vec![0, 3, 8]).unwrap(), conv.clone()).unwrap(),
            conv.adjoint(),
        ];
        for (k, a) in maps.iter().enumerate() {
            for t in 0..20 {
                assert!(adjoint_gap(a, seeds::derive(k as u64, &[t])) < 1e-10, "kind {k}");
            }
        }
    }
}
