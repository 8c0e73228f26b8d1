//! Dense convex QP `min ½ zᵀ H z + cᵀ z  s.t.  E z = e,  G z ≤ g`, solved
//! with Clarabel.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub e_mat: DMatrix<f64>,
    pub e: DVector<f64>,
    pub g_mat: DMatrix<f64>,
    pub g: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QpOutcome {
    Solved { z: DVector<f64>, objective: f64 },
    Infeasible,
}

fn csc(m: &DMatrix<f64>, upper_only: bool) -> CscMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut colptr = Vec::with_capacity(cols + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..cols {
        let last = if upper_only { (j + 1).min(rows) } else { rows };
        for i in 0..last {
            let v = m[(i, j)];
            if v != 0.0 {
                rowval.push(i);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(rows, cols, colptr, rowval, nzval)
}

impl DenseQp {
    pub fn new(dim: usize) -> Self {
        DenseQp {
            h: DMatrix::zeros(dim, dim),
            c: DVector::zeros(dim),
            e_mat: DMatrix::zeros(0, dim),
            e: DVector::zeros(0),
            g_mat: DMatrix::zeros(0, dim),
            g: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.c.dot(z)
    }

    pub fn solve(&self) -> Result<QpOutcome> {
        let n = self.dim();
        let (me, mi) = (self.e.len(), self.g.len());
        let a = {
            let mut a = DMatrix::zeros(me + mi, n);
            a.rows_mut(0, me).copy_from(&self.e_mat);
            a.rows_mut(me, mi).copy_from(&self.g_mat);
            a
        };
        let b: Vec<f64> = self.e.iter().chain(self.g.iter()).copied().collect();
        let mut cones = Vec::new();
        if me > 0 {
            cones.push(SupportedConeT::ZeroConeT(me));
        }
        if mi > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(mi));
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(1e-10)
            .tol_gap_rel(1e-10)
            .tol_feas(1e-10)
            .max_iter(200)
            .build()
            .map_err(|e| Error::Solver(format!("QP settings: {e:?}")))?;
        let h = (&self.h + self.h.transpose()) * 0.5;
        let mut solver = DefaultSolver::new(&csc(&h, true), self.c.as_slice(), &csc(&a, false), &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("QP setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let mut z = DVector::from_column_slice(&sol.x);
                let active: Vec<usize> = (0..mi).filter(|&i| sol.z[me + i] > sol.s[me + i]).collect();
                if let Some(p) = self.polish(&active) {
                    if self.objective(&p) <= self.objective(&z) + 1e-9 * (1.0 + self.objective(&z).abs()) {
                        z = p;
                    }
                }
                let objective = self.objective(&z);
                Ok(QpOutcome::Solved { z, objective })
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Ok(QpOutcome::Infeasible),
            other => Err(Error::Solver(format!("QP solver stopped with status {other:?}"))),
        }
    }

    /// Refines an interior-point guess of the active set: solve the KKT
    /// system with those rows held as equalities, then drop the row with the
    /// most negative multiplier or add the most violated row, until the point
    /// is a KKT point of the full problem. Interior-point iterates stop a
    /// little inside the feasible set, which matters when the objective
    /// carries a large constant.
    fn polish(&self, guess: &[usize]) -> Option<DVector<f64>> {
        let mut active = guess.to_vec();
        let scale = 1.0 + self.g.amax();
        for _ in 0..(2 * self.g.len() + 10) {
            let (z, duals) = self.kkt(&active)?;
            let residual = &self.g_mat * &z - &self.g;
            let (worst_row, _) = residual
                .iter()
                .enumerate()
                .filter(|(i, _)| !active.contains(i))
                .fold((None, 1e-9 * scale), |acc, (i, &r)| if r > acc.1 { (Some(i), r) } else { acc });
            if let Some(i) = worst_row {
                active.push(i);
                continue;
            }
            let (neg, _) = duals
                .iter()
                .enumerate()
                .fold((None, -1e-9), |acc, (j, &d)| if d < acc.1 { (Some(j), d) } else { acc });
            match neg {
                Some(j) => {
                    active.remove(j);
                }
                None => return Some(z),
            }
        }
        None
    }

    /// Minimizer with rows `active` held as equalities, and their multipliers.
    fn kkt(&self, active: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
        let n = self.dim();
        let me = self.e.len();
        let k = n + me + active.len();
        let mut kkt = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&((&self.h + self.h.transpose()) * 0.5));
        rhs.rows_mut(0, n).copy_from(&(-&self.c));
        let rows = (0..me)
            .map(|i| (self.e_mat.row(i), self.e[i]))
            .chain(active.iter().map(|&i| (self.g_mat.row(i), self.g[i])));
        for (j, (row, b)) in rows.enumerate() {
            kkt.view_mut((n + j, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + j), (n, 1)).copy_from(&row.transpose());
            rhs[n + j] = b;
        }
        let sol = kkt.lu().solve(&rhs)?;
        if !sol.iter().all(|v| v.is_finite()) {
            return None;
        }
        let z = sol.rows(0, n).into_owned();
        if (&self.e_mat * &z - &self.e).amax() > 1e-9 * (1.0 + self.e.amax()) {
            return None;
        }
        Some((z, sol.rows(n + me, active.len()).iter().copied().collect()))
    }
}
