use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polynomial::{Block, PolyMat, PolyVec, Polynomial};

/// Error dynamics `ė = f_e(e, x̂, û, δ) + g_e(e, x̂, δ) u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDynamics {
    pub f_e: PolyVec,
    pub g_e: PolyMat,
}

impl ErrorDynamics {
    pub fn new(f_e: PolyVec, g_e: PolyMat) -> Result<Self> {
        if g_e.rows() != f_e.len() {
            return Err(Error::Dimension(format!(
                "f_e has {} entries but g_e has {} rows",
                f_e.len(),
                g_e.rows()
            )));
        }
        for p in f_e.iter().chain(g_e.entries()) {
            if p.depends_on(Block::Theta) || p.depends_on(Block::X) {
                return Err(Error::Dimension(
                    "error dynamics may only depend on e, xhat, uhat and delta".into(),
                ));
            }
        }
        Ok(ErrorDynamics { f_e, g_e })
    }

    pub fn n(&self) -> usize {
        self.f_e.len()
    }

    pub fn m(&self) -> usize {
        self.g_e.cols()
    }

    /// Closed-loop vector field `f_e + g_e κ`.
    pub fn closed_loop(&self, kappa: &PolyVec) -> Result<PolyVec> {
        self.f_e.add(&self.g_e.mul_vec(kappa)?)
    }
}

/// Error dynamics of tracker `ẋ = f(x, δ) + g(x, δ) u` (block `x`) against
/// planner `x̂̇ = f̂(x̂) + ĝ(x̂) û` under the error `e = x − π(x̂)`:
///
/// `f_e = f(e + π(x̂), δ) − (∂π/∂x̂)(f̂(x̂) + ĝ(x̂) û)`, `g_e = g(e + π(x̂), δ)`.
pub fn build_error_dynamics(
    f: &PolyVec,
    g: &PolyMat,
    f_hat: &PolyVec,
    g_hat: &PolyMat,
    pi: &PolyVec,
) -> Result<ErrorDynamics> {
    let n = f.len();
    let n_hat = f_hat.len();
    let m_hat = g_hat.cols();
    if g.rows() != n || pi.len() != n {
        return Err(Error::Dimension(format!(
            "tracker has {n} states, g has {} rows, pi has {} entries",
            g.rows(),
            pi.len()
        )));
    }
    if g_hat.rows() != n_hat {
        return Err(Error::Dimension(format!(
            "planner has {n_hat} states but g_hat has {} rows",
            g_hat.rows()
        )));
    }
    for p in pi.iter() {
        if let Some(b) = p.universe().blocks().iter().find(|b| b.block != Block::Xhat) {
            return Err(Error::Dimension(format!("pi depends on block {}", b.block)));
        }
        if p.universe().dim_of(Block::Xhat).unwrap_or(0) > n_hat {
            return Err(Error::Dimension("pi uses more planner states than exist".into()));
        }
    }
    if f_hat
        .iter()
        .chain(g_hat.entries())
        .any(|p| p.universe().dim_of(Block::Xhat).unwrap_or(0) > n_hat)
    {
        return Err(Error::Dimension("planner model uses more planner states than exist".into()));
    }
    let x_of_e = PolyVec::new(
        (0..n)
            .map(|i| Polynomial::var(Block::E.var(i)) + pi[i].clone())
            .collect(),
    );
    let f_x = f.substitute(Block::X, &x_of_e)?;
    let g_x = g.substitute(Block::X, &x_of_e)?;
    let u_hat = PolyVec::vars(Block::Uhat, m_hat);
    let planner = f_hat.add(&g_hat.mul_vec(&u_hat)?)?;
    let jac = pi.jacobian(Block::Xhat, n_hat);
    let f_e = f_x.sub(&jac.mul_vec(&planner)?)?;
    ErrorDynamics::new(f_e, g_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::Point;

    fn xv(i: usize) -> Polynomial {
        Polynomial::var(Block::X.var(i))
    }

    fn xh(i: usize) -> Polynomial {
        Polynomial::var(Block::Xhat.var(i))
    }

    #[test]
    fn identical_models_give_zero_drift_at_zero_error() {
        let f = PolyVec::new(vec![xv(1), &xv(0) * &xv(0) * 2.0 - xv(1)]);
        let g = PolyMat::from_rows(vec![vec![Polynomial::zero()], vec![Polynomial::constant(1.0)]]).unwrap();
        let f_hat = PolyVec::new(vec![xh(1), &xh(0) * &xh(0) * 2.0 - xh(1)]);
        let g_hat = g.clone();
        let pi = PolyVec::vars(Block::Xhat, 2);
        let dyn_e = build_error_dynamics(&f, &g, &f_hat, &g_hat, &pi).unwrap();
        let at_zero = dyn_e.f_e.map(|p| p.partial_eval(Block::E, &[0.0, 0.0]));
        // û enters through ĝ û on the planner side and must be cancelled by u = û
        let kappa = PolyVec::vars(Block::Uhat, 1);
        let cl = at_zero.add(&g.mul_vec(&kappa).unwrap()).unwrap();
        for p in cl.iter() {
            assert!(p.max_abs_coeff() < 1e-12, "{p}");
        }
    }

    #[test]
    fn linear_models_stay_linear() {
        let f = PolyVec::new(vec![xv(1), &xv(0) * -2.0 + &xv(1) * 0.5]);
        let g = PolyMat::constant(&[vec![0.0], vec![1.0]]).unwrap();
        let f_hat = PolyVec::new(vec![xh(1) * 0.9]);
        let g_hat = PolyMat::constant(&[vec![2.0]]).unwrap();
        let pi = PolyVec::new(vec![xh(0), Polynomial::zero()]);
        let d = build_error_dynamics(&f, &g, &f_hat, &g_hat, &pi);
        // planner has 1 state but its drift uses a second one: rejected
        assert!(d.is_err());
        let f_hat = PolyVec::new(vec![xh(0) * 0.9]);
        let d = build_error_dynamics(&f, &g, &f_hat, &g_hat, &pi).unwrap();
        assert!(d.f_e.iter().all(|p| p.degree() <= 1));
        let pt = Point::new()
            .with(Block::E, &[0.1, -0.2])
            .with(Block::Xhat, &[0.3])
            .with(Block::Uhat, &[0.7]);
        // f_e1 = (e2 + 0) − (0.9 x̂ + 2 û)
        let v = d.f_e[0].eval(&pt).unwrap();
        assert!((v - (-0.2 - 0.27 - 1.4)).abs() < 1e-12);
    }
}
