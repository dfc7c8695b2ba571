//! Synthetic ground truths for risk experiments.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Vector;

/// `k` nonzero entries at uniformly drawn positions with random signs and
/// magnitudes in `[amplitude/2, amplitude]`.
pub fn sparse(rng: &mut ChaCha8Rng, p: usize, k: usize, amplitude: f64) -> Vector {
    let mut x = Vector::zeros(p);
    for i in sample(rng, p, k.min(p)).into_iter() {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        x[i] = sign * amplitude * rng.random_range(0.5..=1.0);
    }
    x
}

/// `active` blocks drawn uniformly, each filled with i.i.d. normal entries
/// scaled by `amplitude`.
pub fn group_sparse(rng: &mut ChaCha8Rng, blocks: &[Vec<usize>], active: usize, amplitude: f64) -> Vector {
    let p = blocks.iter().map(|b| b.len()).sum();
    let mut x = Vector::zeros(p);
    for b in sample(rng, blocks.len(), active.min(blocks.len())).into_iter() {
        let values = crate::seeds::normal_vector(rng, blocks[b].len());
        for (k, &i) in blocks[b].iter().enumerate() {
            x[i] = amplitude * values[k];
        }
    }
    x
}

/// Row-major `height × width` image made of `rects` random axis-aligned
/// rectangles with levels in `[0, amplitude]` added on a zero background.
pub fn piecewise_constant(rng: &mut ChaCha8Rng, height: usize, width: usize, rects: usize, amplitude: f64) -> Vector {
    let mut x = Vector::zeros(height * width);
    for _ in 0..rects {
        let (r0, r1) = ordered(rng, height);
        let (c0, c1) = ordered(rng, width);
        let level = amplitude * rng.random_range(0.0..=1.0);
        for i in r0..r1 {
            for j in c0..c1 {
                x[i * width + j] += level;
            }
        }
    }
    x
}

fn ordered(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let a = rng.random_range(0..n);
    let b = rng.random_range(0..n);
    (a.min(b), a.max(b) + 1)
}
