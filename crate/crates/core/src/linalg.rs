//! Small dense Riccati and Lyapunov solvers used for initial guesses and
//! terminal costs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Stabilizing solution of `AᵀX + XA − XBR⁻¹BᵀX + Q = 0` by the matrix sign
/// function of the Hamiltonian.
pub fn care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Initialization("input weight is singular".into()))?;
    let g = b * r_inv * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut w = h;
    for _ in 0..100 {
        let inv = w
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Initialization("Hamiltonian has imaginary-axis eigenvalues".into()))?;
        let det = w.clone().lu().determinant().abs();
        let c = det.powf(-1.0 / (2 * n) as f64);
        let next = (&w * c + inv / c) * 0.5;
        let change = (&next - &w).norm() / next.norm().max(1.0);
        w = next;
        if change < 1e-13 {
            break;
        }
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Initialization(format!("Riccati solve failed: {e}")))?;
    let x = symmetrize(&x);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Initialization("Riccati solution is not finite".into()));
    }
    Ok(x)
}

/// Stabilizing solution of the discrete algebraic Riccati equation
/// `X = Q + AᵀXA − AᵀXB(R + BᵀXB)⁻¹BᵀXA`, by fixed-point iteration.
pub fn dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = q.clone();
    for _ in 0..100_000 {
        let s = r + b.transpose() * &x * b;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Initialization("singular Riccati gain".into()))?;
        let atxb = a.transpose() * &x * b;
        let next = symmetrize(&(q + a.transpose() * &x * a - &atxb * s_inv * atxb.transpose()));
        let change = (&next - &x).norm() / next.norm().max(1.0);
        x = next;
        if change < 1e-14 {
            return Ok(x);
        }
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::Initialization("discrete Riccati iteration did not converge".into()))
}

/// Solution of `AᵀX + XA + Q = 0` through the Kronecker form.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
    let rhs = DMatrix::from_iterator(n * n, 1, q.iter().map(|v| -v));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Initialization("Lyapunov operator is singular".into()))?;
    Ok(symmetrize(&DMatrix::from_iterator(n, n, sol.iter().copied())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn care_double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let x = care(&a, &b, &q, &r).unwrap();
        // known closed form: [[√3, 1], [1, √3]]
        let s3 = 3f64.sqrt();
        assert!((x[(0, 0)] - s3).abs() < 1e-9);
        assert!((x[(0, 1)] - 1.0).abs() < 1e-9);
        assert!((x[(1, 1)] - s3).abs() < 1e-9);
    }

    #[test]
    fn care_residual_unstable() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, -1.0, 3.0, 1.0, 0.0, 2.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let r = DMatrix::identity(2, 2) * 0.5;
        let x = care(&a, &b, &q, &r).unwrap();
        let res = a.transpose() * &x + &x * &a - &x * &b * r.try_inverse().unwrap() * b.transpose() * &x + &q;
        assert!(res.norm() < 1e-8 * x.norm());
        let k = b.transpose() * &x * 2.0;
        let cl = &a - &b * k;
        assert!(cl.complex_eigenvalues().iter().all(|l| l.re < 0.0));
    }

    #[test]
    fn dare_scalar() {
        // x = q + a²x − a²x²b²/(r + b²x) with a=2, b=1, q=1, r=1:
        // x² − 4x − 1 = 0 → x = 2 + √5
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        let x = dare(&a, &b, &one, &one).unwrap();
        assert!((x[(0, 0)] - (2.0 + 5f64.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn lyapunov_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let q = DMatrix::identity(2, 2);
        let x = lyapunov(&a, &q).unwrap();
        let res = a.transpose() * &x + &x * &a + &q;
        assert!(res.norm() < 1e-12);
        assert!(x.symmetric_eigenvalues().min() > 0.0);
    }
}
