use super::{finish_margin, ActiveModel, Certificate, ManifoldId, Structure};
use crate::linalg::{project_l1_ball, project_simplex};
use crate::{Matrix, Vector};

/// `prox_{t‖·‖∞}(v) = v − proj_{t B₁}(v)`.
pub(crate) fn prox(v: &Vector, t: f64) -> Vector {
    let p = project_l1_ball(v.as_slice(), t);
    v - Vector::from_vec(p)
}

pub(crate) fn identify(lambda: f64, x: &Vector, tol: f64) -> ActiveModel {
    let p = x.len();
    let m = x.amax();
    if m <= tol {
        return ActiveModel::new(
            lambda,
            x.clone(),
            ManifoldId::Origin,
            Matrix::zeros(p, 0),
            Vector::zeros(p),
            Matrix::zeros(0, 0),
            Structure::Linf {
                saturated: (0..p).collect(),
                signs: Vec::new(),
            },
        );
    }
    let saturated: Vec<usize> = (0..p).filter(|&i| x[i].abs() >= m - tol).collect();
    let signs: Vec<f64> = saturated.iter().map(|&i| x[i].signum()).collect();
    identify_set(lambda, x, saturated, signs)
}

/// Model at `x` with a prescribed saturation set and sign pattern.
pub(crate) fn identify_set(lambda: f64, x: &Vector, saturated: Vec<usize>, signs: Vec<f64>) -> ActiveModel {
    let p = x.len();
    let mut in_set = vec![false; p];
    for &i in &saturated {
        in_set[i] = true;
    }
    let free: Vec<usize> = (0..p).filter(|&i| !in_set[i]).collect();
    let k = free.len() + 1;
    let mut basis = Matrix::zeros(p, k);
    let c = 1.0 / (saturated.len() as f64).sqrt();
    for (&i, &s) in saturated.iter().zip(&signs) {
        basis[(i, 0)] = s * c;
    }
    for (col, &i) in free.iter().enumerate() {
        basis[(i, col + 1)] = 1.0;
    }
    let mut e_x = Vector::zeros(p);
    let n = saturated.len() as f64;
    for (&i, &s) in saturated.iter().zip(&signs) {
        e_x[i] = lambda * s / n;
    }
    let id = ManifoldId::Saturation {
        indices: saturated.clone(),
        signs: signs.iter().map(|&s| s as i8).collect(),
    };
    ActiveModel::new(
        lambda,
        x.clone(),
        id,
        basis,
        e_x,
        Matrix::zeros(k, k),
        Structure::Linf { saturated, signs },
    )
}

/// `∂(λ‖·‖∞)(x) = λ conv{s_i e_i : i ∈ I}` away from the origin and the
/// ℓ₁ ball of radius `λ` at the origin.
pub(crate) fn certificate(lambda: f64, saturated: &[usize], signs: &[f64], g: &Vector) -> Certificate {
    if signs.is_empty() {
        let l1 = g.lp_norm(1);
        let proj = Vector::from_vec(project_l1_ball(g.as_slice(), lambda));
        return Certificate {
            margin: if lambda > 0.0 { 1.0 - l1 / lambda } else { 1.0 },
            kkt: (g - proj).norm(),
        };
    }
    let mut in_set = vec![false; g.len()];
    for &i in saturated {
        in_set[i] = true;
    }
    let off: f64 = (0..g.len()).filter(|&i| !in_set[i]).map(|i| g[i] * g[i]).sum();
    let theta: Vec<f64> = saturated.iter().zip(signs).map(|(&i, &s)| s * g[i] / lambda).collect();
    let total: f64 = theta.iter().sum();
    let n = saturated.len() as f64;
    let mismatch = (off + (lambda * (total - 1.0)).powi(2) / n).sqrt();
    let margin = if saturated.len() == 1 {
        1.0
    } else {
        n * theta.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let scaled: Vec<f64> = theta.iter().map(|t| t * lambda).collect();
    let proj = project_simplex(&scaled, lambda);
    let face: f64 = scaled.iter().zip(&proj).map(|(a, b)| (a - b).powi(2)).sum();
    Certificate {
        margin: finish_margin(margin, mismatch, lambda),
        kkt: (off + face).sqrt(),
    }
}
