use nalgebra::DMatrix;

use super::SynthesisProblem;
use crate::error::Result;
use crate::polynomial::{Block, Monomial, PolyMat, PolyVec, Polynomial, Var};
use crate::semialg::SemialgebraicSet;

/// Problem data in scaled coordinates `e = σ_e ẽ`, `x̂ = σ_x x̃`, `û = σ_u ũ`,
/// `δ = σ_δ δ̃`, `u = σ_in ũ_in`, with every constraint row normalized to a
/// unit largest coefficient. Positive variable scalings map SOS polynomials to
/// SOS polynomials, so certificates found here carry over unchanged.
#[derive(Clone, Debug)]
pub(crate) struct Scaled {
    pub sigma_e: Vec<f64>,
    pub sigma_xhat: Vec<f64>,
    pub sigma_uhat: Vec<f64>,
    pub sigma_delta: Vec<f64>,
    pub sigma_u: Vec<f64>,
    pub f: PolyVec,
    pub g: PolyMat,
    /// Planner-state, planner-input and disturbance rows (`≤ 0`).
    pub signal_rows: Vec<Polynomial>,
    pub delta_eqs: Vec<Polynomial>,
    pub theta_rows: Vec<Polynomial>,
    pub omega_rows: Vec<Polynomial>,
    pub omega_eqs: Vec<Polynomial>,
    /// Input polytope `H' κ̃ ≤ h'` in scaled inputs.
    pub h_mat: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    /// `(e, x̂, û, δ, θ)`.
    pub vars_all: Vec<Var>,
    /// `(e, θ)`.
    pub vars_v: Vec<Var>,
    pub n: usize,
    pub n_theta: usize,
}

fn normalize(p: &Polynomial) -> Polynomial {
    let c = p.max_abs_coeff();
    if c > 0.0 {
        p.scale(1.0 / c)
    } else {
        p.clone()
    }
}

fn interval_scale(set: &SemialgebraicSet, block: Block, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| match set.interval_of(block.var(i)) {
            Some((lo, hi)) if lo.is_finite() && hi.is_finite() && lo.abs().max(hi.abs()) > 0.0 => {
                lo.abs().max(hi.abs())
            }
            _ => 1.0,
        })
        .collect()
}

impl Scaled {
    /// Scales built from the problem's sets and the quadratic form `S` of the
    /// current storage function (error scales are the half-widths of the
    /// bounding box of `{eᵀ S e ≤ level}`).
    pub fn new(problem: &SynthesisProblem, s: &DMatrix<f64>, level: f64) -> Result<Scaled> {
        let n = problem.dynamics.n();
        let m = problem.dynamics.m();
        let s_inv = s.clone().try_inverse();
        let sigma_e: Vec<f64> = (0..n)
            .map(|i| match &s_inv {
                Some(si) if si[(i, i)] > 0.0 && level > 0.0 => (si[(i, i)] * level).sqrt(),
                _ => 1.0,
            })
            .collect();
        let upper = problem.theta.upper.clone();
        let xs = problem.xhat_set.instantiate(&upper, &problem.theta)?;
        let us = problem.uhat_set.instantiate(&upper, &problem.theta)?;
        let sigma_xhat = interval_scale(&xs, Block::Xhat, problem.n_hat);
        let sigma_uhat = interval_scale(&us, Block::Uhat, problem.m_hat);
        let sigma_delta = interval_scale(&problem.delta_set, Block::Delta, problem.n_delta);
        let sigma_u: Vec<f64> = (0..m)
            .map(|j| {
                problem
                    .input
                    .h_mat
                    .iter()
                    .zip(&problem.input.h)
                    .filter(|(row, _)| {
                        row[j] != 0.0 && row.iter().enumerate().all(|(l, &v)| l == j || v == 0.0)
                    })
                    .map(|(row, &hk)| hk / row[j].abs())
                    .filter(|b| *b > 0.0)
                    .fold(f64::INFINITY, f64::min)
            })
            .map(|b| if b.is_finite() { b } else { 1.0 })
            .collect();

        let mut sc = Scaled {
            sigma_e,
            sigma_xhat,
            sigma_uhat,
            sigma_delta,
            sigma_u,
            f: PolyVec::zeros(0),
            g: PolyMat::zeros(0, 0),
            signal_rows: Vec::new(),
            delta_eqs: Vec::new(),
            theta_rows: Vec::new(),
            omega_rows: Vec::new(),
            omega_eqs: Vec::new(),
            h_mat: Vec::new(),
            h: Vec::new(),
            vars_all: Vec::new(),
            vars_v: Vec::new(),
            n,
            n_theta: problem.theta.dim(),
        };

        let d = &problem.dynamics;
        sc.f = PolyVec::new(
            (0..n)
                .map(|i| sc.to_scaled(&d.f_e[i]).scale(1.0 / sc.sigma_e[i]))
                .collect(),
        );
        let mut g = PolyMat::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                g[(i, j)] = sc.to_scaled(&d.g_e[(i, j)]).scale(sc.sigma_u[j] / sc.sigma_e[i]);
            }
        }
        sc.g = g;

        let rows = |set: &SemialgebraicSet, sc: &Scaled| -> Vec<Polynomial> {
            set.inequalities
                .iter()
                .map(|r| normalize(&sc.to_scaled(&r.residual())))
                .collect()
        };
        sc.signal_rows = rows(&problem.xhat_set.symbolic(), &sc);
        sc.signal_rows.extend(rows(&problem.uhat_set.symbolic(), &sc));
        sc.signal_rows.extend(rows(&problem.delta_set, &sc));
        sc.delta_eqs = problem
            .delta_set
            .equalities
            .iter()
            .map(|q| normalize(&sc.to_scaled(q)))
            .collect();
        sc.theta_rows = rows(&problem.theta.as_set(), &sc);
        sc.omega_rows = rows(&problem.omega, &sc);
        sc.omega_eqs = problem
            .omega
            .equalities
            .iter()
            .map(|q| normalize(&sc.to_scaled(q)))
            .collect();

        for (row, &hk) in problem.input.h_mat.iter().zip(&problem.input.h) {
            let scaled: Vec<f64> = row.iter().zip(&sc.sigma_u).map(|(a, s)| a * s).collect();
            let norm = if hk > 0.0 {
                hk
            } else {
                scaled.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300)
            };
            sc.h_mat.push(scaled.iter().map(|v| v / norm).collect());
            sc.h.push(hk / norm);
        }

        let block_vars = |b: Block, k: usize| (0..k).map(move |i| b.var(i));
        sc.vars_all = block_vars(Block::E, n)
            .chain(block_vars(Block::Xhat, problem.n_hat))
            .chain(block_vars(Block::Uhat, problem.m_hat))
            .chain(block_vars(Block::Delta, problem.n_delta))
            .chain(block_vars(Block::Theta, sc.n_theta))
            .collect();
        sc.vars_v = block_vars(Block::E, n)
            .chain(block_vars(Block::Theta, sc.n_theta))
            .collect();
        Ok(sc)
    }

    pub fn factor(&self, v: Var) -> f64 {
        let i = v.index as usize;
        match v.block {
            Block::E => self.sigma_e[i],
            Block::Xhat => self.sigma_xhat[i],
            Block::Uhat => self.sigma_uhat[i],
            Block::Delta => self.sigma_delta[i],
            Block::Theta | Block::X => 1.0,
        }
    }

    /// `p(σ ξ̃)` as a polynomial in the scaled variables.
    pub fn to_scaled(&self, p: &Polynomial) -> Polynomial {
        p.scale_vars(|v| self.factor(v))
    }

    /// Inverse of [`Scaled::to_scaled`].
    pub fn from_scaled(&self, p: &Polynomial) -> Polynomial {
        p.scale_vars(|v| 1.0 / self.factor(v))
    }

    /// Controller in original coordinates from the scaled one.
    pub fn kappa_from_scaled(&self, kappa: &PolyVec) -> PolyVec {
        PolyVec::new(
            kappa
                .iter()
                .zip(&self.sigma_u)
                .map(|(k, s)| self.from_scaled(k).scale(*s))
                .collect(),
        )
    }

    /// Quadratic-form matrix of the `e`-quadratic part of `v`.
    pub fn quadratic_part(v: &Polynomial, n: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let m = Monomial::var(Block::E.var(i)).mul(&Monomial::var(Block::E.var(j)));
                let c = v.coefficient(&m);
                s[(i, j)] = if i == j { c } else { c / 2.0 };
            }
        }
        s
    }
}
