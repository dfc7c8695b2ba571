#![allow(dead_code)]

use pssure::linop::Conv2d;
use pssure::penalty::{Blocks, PenaltyKind};
use pssure::{seeds, LinearMap, Matrix, Vector};
use rand_chacha::ChaCha8Rng;

/// Gaussian design with entries of variance `1/n`.
pub fn gaussian_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix {
    let v = seeds::normal_vector(rng, n * p) / (n as f64).sqrt();
    Matrix::from_column_slice(n, p, v.as_slice())
}

pub fn tv_kind(h: usize, w: usize) -> PenaltyKind {
    PenaltyKind::GeneralGroupLasso {
        analysis: LinearMap::grad2d(h, w),
        blocks: Blocks::uniform(h * w, 2).unwrap(),
    }
}

pub fn blur(h: usize, w: usize, sigma: f64) -> LinearMap {
    LinearMap::conv2d(Conv2d::gaussian(h, w, sigma).unwrap())
}

pub fn rel(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Dense matrix exposing the adjoint through the transpose.
pub fn dense(m: Matrix) -> LinearMap {
    LinearMap::dense(m)
}
