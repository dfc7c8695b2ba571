//! Conjugate gradients and MINRES for symmetric operators.

use crate::Vector;

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub x: Vector,
    pub iterations: usize,
    /// True relative residual `‖b − A x‖ / ‖b‖`.
    pub residual: f64,
    pub converged: bool,
}

fn relative_residual<F: Fn(&Vector) -> Vector>(op: &F, b: &Vector, x: &Vector) -> f64 {
    let nb = b.norm();
    if nb == 0.0 {
        return 0.0;
    }
    (b - op(x)).norm() / nb
}

/// Conjugate gradients for a symmetric positive semidefinite operator.
pub fn cg<F: Fn(&Vector) -> Vector>(op: F, b: &Vector, x0: Option<&Vector>, tol: f64, maxit: usize) -> KrylovOutcome {
    let nb = b.norm();
    let mut x = x0.cloned().unwrap_or_else(|| Vector::zeros(b.len()));
    if nb == 0.0 {
        return KrylovOutcome {
            x: Vector::zeros(b.len()),
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let mut r = b - op(&x);
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut it = 0;
    while it < maxit && rr.sqrt() > tol * nb {
        let ap = op(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_next = r.norm_squared();
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
        it += 1;
    }
    let residual = relative_residual(&op, b, &x);
    KrylovOutcome {
        x,
        iterations: it,
        residual,
        converged: residual <= tol,
    }
}

/// One MINRES pass (Paige and Saunders) from the zero vector.
fn minres_pass<F: Fn(&Vector) -> Vector>(op: &F, b: &Vector, tol: f64, maxit: usize) -> (Vector, usize) {
    let n = b.len();
    let mut x = Vector::zeros(n);
    let beta1 = b.norm();
    if beta1 == 0.0 {
        return (x, 0);
    }
    let mut r1 = b.clone();
    let mut r2 = b.clone();
    let mut y = b.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = Vector::zeros(n);
    let mut w2 = Vector::zeros(n);
    let mut itn = 0;
    while itn < maxit {
        itn += 1;
        let v = &y / beta;
        y = op(&v);
        if itn >= 2 {
            y.axpy(-beta / oldb, &r1, 1.0);
        }
        let alfa = v.dot(&y);
        y.axpy(-alfa / beta, &r2, 1.0);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = y.norm();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, w.clone());
        w = (&v - &w1 * oldeps - &w2 * delta) / gamma;
        x.axpy(phi, &w, 1.0);
        if phibar <= tol * beta1 || beta == 0.0 {
            break;
        }
    }
    (x, itn)
}

/// MINRES for a symmetric (possibly indefinite or singular but consistent)
/// operator. Passes are restarted on the true residual until it meets `tol`
/// or the iteration budget is spent.
pub fn minres<F: Fn(&Vector) -> Vector>(op: F, b: &Vector, tol: f64, maxit: usize) -> KrylovOutcome {
    let nb = b.norm();
    let mut x = Vector::zeros(b.len());
    let mut used = 0;
    let mut residual = if nb == 0.0 { 0.0 } else { 1.0 };
    for _ in 0..8 {
        if residual <= tol || used >= maxit {
            break;
        }
        let r = b - op(&x);
        let target = tol * nb / r.norm().max(f64::MIN_POSITIVE);
        let (dx, its) = minres_pass(&op, &r, (0.5 * target).min(1.0), maxit - used);
        used += its;
        x += dx;
        residual = relative_residual(&op, b, &x);
    }
    KrylovOutcome {
        x,
        iterations: used,
        residual,
        converged: residual <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    #[test]
    fn minres_solves_indefinite_system() {
        let a = Matrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, -3.0, 1.0, 0.0, 1.0, 1.0]);
        let x = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let b = &a * &x;
        let out = minres(|v| &a * v, &b, 1e-12, 100);
        assert!(out.converged);
        assert!((out.x - x).norm() < 1e-10);
    }

    #[test]
    fn minres_handles_singular_consistent_system() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0, 0.0]));
        let b = Vector::from_vec(vec![1.0, 1.0, 0.0]);
        let out = minres(|v| &a * v, &b, 1e-12, 100);
        assert!(out.converged);
        assert!((out.x - Vector::from_vec(vec![1.0, 0.5, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = Matrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = Vector::from_vec(vec![1.0, 2.0]);
        let out = cg(|v| &a * v, &b, None, 1e-12, 50);
        assert!(out.converged);
        assert!((&a * out.x - b).norm() < 1e-11);
    }
}
