use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear program over free variables and positive-semidefinite blocks:
///
/// ```text
/// minimize    Σ c_k x_k
/// subject to  Σ_k A_rk x_k = b_r      for every row r
///             x = (free, svec(X_1), ..., svec(X_B)),  X_j ⪰ 0
/// ```
///
/// The variables of block `j` are its lower-triangle entries `(a, b)` with
/// `a ≥ b`, stored row by row (`(0,0), (1,0), (1,1), (2,0), ...`). A variable
/// stands for both `X_ab` and `X_ba`, so a coefficient on an off-diagonal
/// variable multiplies the single entry value, not the pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    /// Number of unconstrained scalar variables; they come first.
    pub free: usize,
    /// Order of each PSD block.
    pub blocks: Vec<usize>,
    /// Equality coefficients `(row, variable, value)`, sorted by row then variable.
    pub equalities: Vec<(usize, usize, f64)>,
    /// Right-hand side, one entry per row.
    pub rhs: Vec<f64>,
    /// Sparse objective `(variable, value)` to be minimized.
    pub objective: Vec<(usize, f64)>,
}

impl ConicProblem {
    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    /// Total number of scalar variables.
    pub fn nvars(&self) -> usize {
        self.free + self.blocks.iter().map(|n| n * (n + 1) / 2).sum::<usize>()
    }

    /// Offset of the first variable of each block.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut off = self.free;
        for &n in &self.blocks {
            out.push(off);
            off += n * (n + 1) / 2;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.nvars();
        let m = self.rows();
        for &(r, v, _) in &self.equalities {
            if r >= m || v >= nv {
                return Err(Error::Compile(format!(
                    "equality entry ({r}, {v}) out of range ({m} rows, {nv} variables)"
                )));
            }
        }
        if self.objective.iter().any(|&(v, _)| v >= nv) {
            return Err(Error::Compile("objective entry out of range".into()));
        }
        Ok(())
    }
}

/// Position of lower-triangle entry `(a, b)`, `a ≥ b`, inside its block.
pub fn tri_index(a: usize, b: usize) -> usize {
    debug_assert!(a >= b);
    a * (a + 1) / 2 + b
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Primal values in the variable layout of [`ConicProblem`].
    pub x: Vec<f64>,
    /// Equality multipliers.
    pub y: Vec<f64>,
    pub objective: f64,
    /// Most negative eigenvalue over all PSD blocks (0 if none is negative).
    pub max_psd_residual: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Termination reason for anything other than plain convergence.
    pub message: String,
}

/// A conic solver.
pub trait ConicBackend: Sync {
    fn name(&self) -> &str;
    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution>;
}

impl<B: ConicBackend + ?Sized> ConicBackend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution> {
        (**self).solve(problem)
    }
}
