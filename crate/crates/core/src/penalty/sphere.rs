//! `J(x) = max(‖x‖ − 1, 0)`.

use super::{finish_margin, ActiveModel, Certificate, ManifoldId, SphereRegion, Structure};
use crate::linalg::orthonormal_complement;
use crate::{Matrix, Vector};

pub(crate) fn prox(v: &Vector, t: f64) -> Vector {
    let n = v.norm();
    if n <= 1.0 {
        v.clone()
    } else if n <= 1.0 + t {
        v / n
    } else {
        v * (1.0 - t / n)
    }
}

pub(crate) fn identify(lambda: f64, x: &Vector, tol: f64) -> ActiveModel {
    let n = x.norm();
    let region = if (n - 1.0).abs() <= tol {
        SphereRegion::On
    } else if n < 1.0 {
        SphereRegion::Inside
    } else {
        SphereRegion::Outside
    };
    identify_region(lambda, x, region)
}

pub(crate) fn identify_region(lambda: f64, x: &Vector, region: SphereRegion) -> ActiveModel {
    let p = x.len();
    let n = x.norm();
    let (basis, e_x, hessian) = match region {
        SphereRegion::Inside => (Matrix::identity(p, p), Vector::zeros(p), Matrix::zeros(p, p)),
        SphereRegion::On => {
            let dir = Matrix::from_column_slice(p, 1, (x / n).as_slice());
            let basis = orthonormal_complement(&dir, p);
            let k = basis.ncols();
            (basis, Vector::zeros(p), Matrix::zeros(k, k))
        }
        SphereRegion::Outside => {
            let xn = x / n;
            let h = (Matrix::identity(p, p) - &xn * xn.transpose()) * (lambda / n);
            (Matrix::identity(p, p), &xn * lambda, h)
        }
    };
    ActiveModel::new(lambda, x.clone(), ManifoldId::Sphere(region), basis, e_x, hessian, Structure::Sphere { region })
}

/// On the sphere `∂(λJ)(x) = {θ λ x : θ ∈ [0, 1]}`; elsewhere `J` is smooth.
pub(crate) fn certificate(lambda: f64, model: &ActiveModel, region: SphereRegion, g: &Vector) -> Certificate {
    let x = &model.point;
    match region {
        SphereRegion::On => {
            let n = x.norm();
            let xn = x / n;
            let along = g.dot(&xn);
            let mismatch = (g - &xn * along).norm();
            let theta = along / lambda;
            let clipped = theta.clamp(0.0, 1.0);
            let face = lambda * (theta - clipped);
            Certificate {
                margin: finish_margin(1.0 - (2.0 * theta - 1.0).abs(), mismatch, lambda),
                kkt: (mismatch * mismatch + face * face).sqrt(),
            }
        }
        _ => {
            let mismatch = (g - &model.e_x).norm();
            Certificate {
                margin: finish_margin(1.0, mismatch, lambda),
                kkt: mismatch,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_regions() {
        let v = Vector::from_vec(vec![0.3, 0.4]);
        assert_eq!(prox(&v, 1.0), v);
        let v = Vector::from_vec(vec![0.9, 1.2]);
        assert!((prox(&v, 1.0).norm() - 1.0).abs() < 1e-15);
        let v = Vector::from_vec(vec![3.0, 4.0]);
        assert!((prox(&v, 1.0) - Vector::from_vec(vec![2.4, 3.2])).norm() < 1e-15);
    }

    #[test]
    fn outside_hessian_is_scaled_normal_projector() {
        let x = Vector::from_vec(vec![2.0, 0.0]);
        let m = identify(1.0, &x, 1e-6);
        let q = m.hessian_apply(&Vector::from_vec(vec![0.0, 1.0]));
        assert!((q - Vector::from_vec(vec![0.0, 0.5])).norm() < 1e-15);
        assert_eq!(m.hessian_apply(&Vector::from_vec(vec![1.0, 0.0])).norm(), 0.0);
    }

    #[test]
    fn on_sphere_margin() {
        let x = Vector::from_vec(vec![1.0, 0.0]);
        let m = identify(2.0, &x, 1e-6);
        let c = certificate(2.0, &m, SphereRegion::On, &Vector::from_vec(vec![1.0, 0.0]));
        assert!((c.margin - 1.0).abs() < 1e-15 && c.kkt == 0.0);
        let c = certificate(2.0, &m, SphereRegion::On, &Vector::from_vec(vec![2.0, 0.0]));
        assert!(c.margin.abs() < 1e-15);
    }
}
