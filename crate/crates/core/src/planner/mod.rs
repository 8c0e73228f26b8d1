//! Receding-horizon planner over the low-fidelity model.
//!
//! Two paths share the constraint handling: a QP over the model linearized
//! at the target (the default) and single-shooting SQP on the nonlinear
//! model. Both measure cost about a configurable target state.

mod discrete;
mod qp;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use discrete::{discretize, DiscreteMap};
pub use qp::{DenseQp, QpOutcome};

use crate::error::{Error, Result};
use crate::linalg::dare;
use crate::models::Benchmark;
use crate::polynomial::{Block, PolyMat, PolyVec};
use crate::semialg::SemialgebraicSet;

/// Constraint rows count as satisfied within this tolerance.
pub const CONSTRAINT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerModel {
    Linear,
    Nonlinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqpSettings {
    pub iterations: usize,
    pub tol: f64,
    /// Weight of the exact penalty on state-constraint violation.
    pub penalty: f64,
    pub trust_radius: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        SqpSettings {
            iterations: 50,
            tol: 1e-9,
            penalty: 1e4,
            trust_radius: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub ts: f64,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Terminal weight; the discrete Riccati solution at the target if absent.
    pub p_n: Option<Vec<Vec<f64>>>,
    /// Half-widths of the terminal box around the target.
    pub terminal_half_width: Vec<f64>,
    /// Regulation target; the benchmark's planner target if absent.
    pub target: Option<Vec<f64>>,
    pub model: PlannerModel,
    pub sqp: SqpSettings,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 30,
            ts: 0.05,
            q: vec![vec![10.0, 0.0], vec![0.0, 1.0]],
            r: vec![vec![1.0]],
            p_n: None,
            terminal_half_width: vec![0.05, 0.05],
            target: None,
            model: PlannerModel::Linear,
            sqp: SqpSettings::default(),
        }
    }
}

impl PlannerConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Componentwise bounds `lo ≤ v ≤ hi`; infinite entries are absent bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    /// Reads a set of block `block` as a box. Every row must involve a single
    /// variable and be an interval in it.
    pub fn of_set(set: &SemialgebraicSet, block: Block, dim: usize) -> Result<Bounds> {
        let rows = set.residuals().into_iter().chain(set.equalities.iter().cloned());
        for p in rows {
            let used = p.vars_used();
            let readable = match used.as_slice() {
                [] => true,
                [v] => v.block == block && set.interval_of(*v).is_some(),
                _ => false,
            };
            if !readable {
                return Err(Error::Config(format!(
                    "planner constraint `{p}` is not an interval on one {block} variable"
                )));
            }
        }
        let mut b = Bounds {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        };
        for i in 0..dim {
            if let Some((lo, hi)) = set.interval_of(block.var(i)) {
                b.lo[i] = lo;
                b.hi[i] = hi;
            }
        }
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Largest amount by which `v` leaves the box; nonpositive inside.
    pub fn violation(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&x, (&lo, &hi))| (lo - x).max(x - hi))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn intersect(&self, other: &Bounds) -> Bounds {
        Bounds {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(a, b)| a > b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    /// First input, applied until the next update.
    pub input: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    /// Predicted states `x̂_0, …, x̂_N`.
    pub states: Vec<Vec<f64>>,
    pub cost: f64,
    pub model: PlannerModel,
    pub iterations: usize,
}

fn matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be {n}×{n}")));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) || m.clone().cholesky().is_none() {
        return Err(Error::Config(format!("{what} must be symmetric positive definite")));
    }
    Ok(m)
}

fn quad(m: &DMatrix<f64>, v: &[f64], r: &[f64]) -> f64 {
    let d = DVector::from_iterator(v.len(), v.iter().zip(r).map(|(a, b)| a - b));
    d.dot(&(m * &d))
}

/// Finite-horizon optimal control problem with box constraints, re-solved
/// from each new state.
#[derive(Clone, Debug)]
pub struct Mpc {
    pub model: DiscreteMap,
    pub config: PlannerConfig,
    pub target: Vec<f64>,
    /// Input holding the model at the target, in the least-squares sense.
    pub u_ref: Vec<f64>,
    pub states: Bounds,
    pub inputs: Bounds,
    pub terminal: Bounds,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p_n: DMatrix<f64>,
    /// Affine model `x⁺ = A x + B u + c` from linearizing at the target.
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    warm: Option<Vec<Vec<f64>>>,
}

impl Mpc {
    pub fn new(
        f_hat: &PolyVec,
        g_hat: &PolyMat,
        state_set: &SemialgebraicSet,
        input_set: &SemialgebraicSet,
        config: PlannerConfig,
        default_target: &[f64],
    ) -> Result<Mpc> {
        if config.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let model = discretize(f_hat, g_hat, config.ts)?;
        let (n, m) = (model.n, model.m);
        let target = config.target.clone().unwrap_or_else(|| default_target.to_vec());
        if target.len() != n {
            return Err(Error::Config(format!(
                "target has {} entries, planner has {n} states",
                target.len()
            )));
        }
        let q = matrix(&config.q, n, "Q")?;
        let r = matrix(&config.r, m, "R")?;
        let states = Bounds::of_set(state_set, Block::Xhat, n)?;
        let inputs = Bounds::of_set(input_set, Block::Uhat, m)?;
        if states.violation(&target) > CONSTRAINT_TOL {
            return Err(Error::Config(format!(
                "target {target:?} lies outside the planner state set"
            )));
        }
        if config.terminal_half_width.len() != n || config.terminal_half_width.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config(
                "terminal half-widths must be nonnegative, one per state".into(),
            ));
        }
        let around = Bounds {
            lo: target
                .iter()
                .zip(&config.terminal_half_width)
                .map(|(t, w)| t - w)
                .collect(),
            hi: target
                .iter()
                .zip(&config.terminal_half_width)
                .map(|(t, w)| t + w)
                .collect(),
        };
        let terminal = around.intersect(&states);

        let (fr, gr) = {
            let zero = vec![0.0; m];
            let f = DVector::from_vec(model.rate(&target, &zero));
            let cols: Vec<DVector<f64>> = (0..m)
                .map(|j| {
                    let mut e = vec![0.0; m];
                    e[j] = 1.0;
                    DVector::from_vec(model.rate(&target, &e)) - &f
                })
                .collect();
            (f, DMatrix::from_columns(&cols))
        };
        let u_ref: Vec<f64> = gr
            .svd(true, true)
            .solve(&(-fr), 1e-12)
            .map_err(|e| Error::Config(format!("equilibrium input: {e}")))?
            .iter()
            .copied()
            .collect();
        if inputs.violation(&u_ref) > CONSTRAINT_TOL {
            return Err(Error::Config(format!(
                "holding input {u_ref:?} at the target violates the input bounds"
            )));
        }
        let (next, a, b) = model.step_jacobian(&target, &u_ref);
        let c = DVector::from_vec(next)
            - &a * DVector::from_column_slice(&target)
            - &b * DVector::from_column_slice(&u_ref);
        let p_n = match &config.p_n {
            Some(p) => matrix(p, n, "P_N")?,
            None => dare(&a, &b, &q, &r)?,
        };
        Ok(Mpc {
            model,
            config,
            target,
            u_ref,
            states,
            inputs,
            terminal,
            q,
            r,
            p_n,
            a,
            b,
            c,
            warm: None,
        })
    }

    /// Planner for the benchmark with constraint sets instantiated at `theta`.
    /// `theta` may lie outside the parameter box, to reproduce heuristic
    /// choices.
    pub fn for_benchmark(bench: &Benchmark, theta: &[f64], config: PlannerConfig) -> Result<Mpc> {
        if theta.len() != bench.theta.dim() {
            return Err(Error::Dimension(format!(
                "θ has {} entries, expected {}",
                theta.len(),
                bench.theta.dim()
            )));
        }
        let xs = bench.xhat_set.symbolic().partial_eval(Block::Theta, theta);
        let us = bench.uhat_set.symbolic().partial_eval(Block::Theta, theta);
        Mpc::new(&bench.f_hat, &bench.g_hat, &xs, &us, config, &bench.target_hat)
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// `(A, B, c)` of the model linearized at the target.
    pub fn linear_model(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DVector<f64>) {
        (&self.a, &self.b, &self.c)
    }

    /// `(Q, R, P_N)`.
    pub fn weights(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.q, &self.r, &self.p_n)
    }

    /// Finite-horizon cost of `inputs` with predicted `states = x̂_0 … x̂_N`.
    pub fn cost(&self, inputs: &[Vec<f64>], states: &[Vec<f64>]) -> f64 {
        let n = self.horizon();
        let mut j = 0.0;
        for k in 0..n {
            j += quad(&self.q, &states[k], &self.target) + quad(&self.r, &inputs[k], &self.u_ref);
        }
        j + quad(&self.p_n, &states[n], &self.target)
    }

    /// Bounds on `x̂_k`: none at the current state, the terminal box at `N`.
    fn stage_bounds(&self, k: usize) -> Option<&Bounds> {
        match k {
            0 => None,
            k if k == self.horizon() => Some(&self.terminal),
            _ => Some(&self.states),
        }
    }

    /// First stage whose bounds the states violate by more than the tolerance.
    pub fn first_violation(&self, inputs: &[Vec<f64>], states: &[Vec<f64>]) -> Option<usize> {
        if inputs.iter().any(|u| self.inputs.violation(u) > CONSTRAINT_TOL) {
            return Some(0);
        }
        (1..=self.horizon()).find(|&k| {
            self.stage_bounds(k)
                .map_or(false, |b| b.violation(&states[k]) > CONSTRAINT_TOL)
        })
    }

    pub fn rollout(&self, x0: &[f64], inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut xs = vec![x0.to_vec()];
        for u in inputs {
            let next = self.model.step(xs.last().expect("nonempty"), u);
            xs.push(next);
        }
        xs
    }

    pub fn solve(&mut self, x0: &[f64]) -> Result<MpcSolution> {
        if x0.len() != self.model.n {
            return Err(Error::Dimension(format!(
                "planner state has {} entries, expected {}",
                x0.len(),
                self.model.n
            )));
        }
        let sol = match self.config.model {
            PlannerModel::Linear => self.solve_linear(x0)?,
            PlannerModel::Nonlinear => self.solve_nonlinear(x0)?,
        };
        let mut shifted: Vec<Vec<f64>> = sol.inputs[1..].to_vec();
        shifted.push(sol.inputs.last().expect("nonempty").clone());
        self.warm = Some(shifted);
        Ok(sol)
    }

    fn u_index(&self, k: usize) -> usize {
        k * self.model.m
    }

    fn x_index(&self, k: usize) -> usize {
        self.horizon() * self.model.m + (k - 1) * self.model.n
    }

    /// Rows `x ≤ hi`, `−x ≤ −lo` for finite bounds, on the columns starting
    /// at `col`, with optional slack column.
    fn push_bounds(rows: &mut Vec<(Vec<(usize, f64)>, f64)>, b: &Bounds, col: usize, slack: Option<usize>) {
        for i in 0..b.dim() {
            for (s, bound) in [(1.0, b.hi[i]), (-1.0, -b.lo[i])] {
                if bound.is_finite() {
                    let mut row = vec![(col + i, s)];
                    if let Some(t) = slack {
                        row.push((t, -1.0));
                    }
                    rows.push((row, bound));
                }
            }
        }
    }

    fn set_inequalities(qp: &mut DenseQp, rows: Vec<(Vec<(usize, f64)>, f64)>) {
        let dim = qp.dim();
        qp.g_mat = DMatrix::zeros(rows.len(), dim);
        qp.g = DVector::zeros(rows.len());
        for (r, (entries, rhs)) in rows.into_iter().enumerate() {
            for (j, v) in entries {
                qp.g_mat[(r, j)] += v;
            }
            qp.g[r] = rhs;
        }
    }

    /// Sparse-form QP of the linearized problem over `(u_0…u_{N−1}, x̂_1…x̂_N)`.
    /// With `elastic`, one slack per stage relaxes the state bounds and the
    /// objective becomes their sum.
    fn linear_qp(&self, x0: &[f64], elastic: bool) -> DenseQp {
        let (n, m, hz) = (self.model.n, self.model.m, self.horizon());
        let base = hz * (n + m);
        let dim = base + if elastic { hz } else { 0 };
        let mut qp = DenseQp::new(dim);
        let r = DVector::from_column_slice(&self.target);
        let ur = DVector::from_column_slice(&self.u_ref);
        if elastic {
            for k in 0..hz {
                qp.c[base + k] = 1.0;
            }
        } else {
            for k in 0..hz {
                let iu = self.u_index(k);
                qp.h.view_mut((iu, iu), (m, m)).copy_from(&(&self.r * 2.0));
                qp.c.rows_mut(iu, m).copy_from(&(&self.r * &ur * -2.0));
            }
            for k in 1..=hz {
                let w = if k == hz { &self.p_n } else { &self.q };
                let ix = self.x_index(k);
                qp.h.view_mut((ix, ix), (n, n)).copy_from(&(w * 2.0));
                qp.c.rows_mut(ix, n).copy_from(&(w * &r * -2.0));
            }
        }
        qp.e_mat = DMatrix::zeros(hz * n, dim);
        qp.e = DVector::zeros(hz * n);
        let x0v = DVector::from_column_slice(x0);
        for k in 0..hz {
            let row = k * n;
            qp.e_mat
                .view_mut((row, self.x_index(k + 1)), (n, n))
                .fill_with_identity();
            qp.e_mat.view_mut((row, self.u_index(k)), (n, m)).copy_from(&(-&self.b));
            let mut rhs = self.c.clone();
            if k == 0 {
                rhs += &self.a * &x0v;
            } else {
                qp.e_mat.view_mut((row, self.x_index(k)), (n, n)).copy_from(&(-&self.a));
            }
            qp.e.rows_mut(row, n).copy_from(&rhs);
        }
        let mut rows = Vec::new();
        for k in 0..hz {
            Self::push_bounds(&mut rows, &self.inputs, self.u_index(k), None);
        }
        for k in 1..=hz {
            let b = self.stage_bounds(k).expect("stages past 0 are bounded");
            Self::push_bounds(&mut rows, b, self.x_index(k), elastic.then_some(base + k - 1));
            if elastic {
                rows.push((vec![(base + k - 1, -1.0)], 0.0));
            }
        }
        Self::set_inequalities(&mut qp, rows);
        qp
    }

    /// Stage at which the linearized problem first becomes infeasible, from
    /// the smallest per-stage relaxation of the state bounds.
    fn infeasible_stage(&self, x0: &[f64]) -> Result<Error> {
        let (n, m, hz) = (self.model.n, self.model.m, self.horizon());
        let base = hz * (n + m);
        let stage = match self.linear_qp(x0, true).solve()? {
            QpOutcome::Infeasible => 0,
            QpOutcome::Solved { z, .. } => (1..=hz).find(|&k| z[base + k - 1] > 1e-7).unwrap_or(hz),
        };
        Ok(Error::PlannerInfeasible {
            stage,
            reason: format!("no input sequence keeps the prediction from {x0:?} inside the constraints"),
        })
    }

    fn solve_linear(&self, x0: &[f64]) -> Result<MpcSolution> {
        let (n, m, hz) = (self.model.n, self.model.m, self.horizon());
        let z = match self.linear_qp(x0, false).solve()? {
            QpOutcome::Solved { z, .. } => z,
            QpOutcome::Infeasible => return Err(self.infeasible_stage(x0)?),
        };
        let inputs: Vec<Vec<f64>> = (0..hz)
            .map(|k| z.rows(self.u_index(k), m).iter().copied().collect())
            .collect();
        let mut states = vec![x0.to_vec()];
        states.extend((1..=hz).map(|k| z.rows(self.x_index(k), n).iter().copied().collect::<Vec<f64>>()));
        Ok(MpcSolution {
            input: inputs[0].clone(),
            cost: self.cost(&inputs, &states),
            inputs,
            states,
            model: PlannerModel::Linear,
            iterations: 1,
        })
    }

    /// Cost plus the exact penalty on state-bound violation.
    fn merit(&self, inputs: &[Vec<f64>], states: &[Vec<f64>]) -> f64 {
        let mu = self.config.sqp.penalty;
        let viol: f64 = (1..=self.horizon())
            .filter_map(|k| self.stage_bounds(k).map(|b| b.violation(&states[k]).max(0.0)))
            .sum();
        self.cost(inputs, states) + mu * viol
    }

    /// Rollout with sensitivities `∂x̂_k/∂(u_0…u_{N−1})`.
    fn sensitivities(&self, x0: &[f64], inputs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<DMatrix<f64>>) {
        let (n, m, hz) = (self.model.n, self.model.m, self.horizon());
        let mut xs = vec![x0.to_vec()];
        let mut sens = vec![DMatrix::zeros(n, hz * m)];
        for k in 0..hz {
            let (next, a, b) = self.model.step_jacobian(&xs[k], &inputs[k]);
            let mut s = &a * &sens[k];
            {
                let mut view = s.view_mut((0, k * m), (n, m));
                view += &(b);
            }
            xs.push(next);
            sens.push(s);
        }
        (xs, sens)
    }

    fn sqp(&self, x0: &[f64], start: Vec<Vec<f64>>) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, usize)> {
        let (n, m, hz) = (self.model.n, self.model.m, self.horizon());
        let set = &self.config.sqp;
        let nu = hz * m;
        let mut us: Vec<Vec<f64>> = start
            .into_iter()
            .map(|u| {
                u.iter()
                    .zip(self.inputs.lo.iter().zip(&self.inputs.hi))
                    .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                    .collect()
            })
            .collect();
        let mut radius = set.trust_radius;
        let mut iterations = 0;
        for it in 0..set.iterations {
            iterations = it + 1;
            let (xs, sens) = self.sensitivities(x0, &us);
            let phi = self.merit(&us, &xs);
            let mut qp = DenseQp::new(nu + hz);
            // Gauss–Newton model of the cost in the step d
            for k in 1..=hz {
                let w = if k == hz { &self.p_n } else { &self.q };
                let dx = DVector::from_iterator(n, xs[k].iter().zip(&self.target).map(|(a, b)| a - b));
                let s = &sens[k];
                let swt = s.transpose() * w;
                {
                    let mut view = qp.h.view_mut((0, 0), (nu, nu));
                    view += &(&swt * s * 2.0);
                }
                {
                    let mut view = qp.c.rows_mut(0, nu);
                    view += &(&swt * dx * 2.0);
                }
            }
            for k in 0..hz {
                let du = DVector::from_iterator(m, us[k].iter().zip(&self.u_ref).map(|(a, b)| a - b));
                {
                    let mut view = qp.h.view_mut((k * m, k * m), (m, m));
                    view += &(&self.r * 2.0);
                }
                {
                    let mut view = qp.c.rows_mut(k * m, m);
                    view += &(&self.r * du * 2.0);
                }
            }
            for k in 0..hz {
                qp.c[nu + k] = set.penalty;
            }
            let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
            for k in 0..hz {
                for j in 0..m {
                    let col = k * m + j;
                    let (lo, hi) = (self.inputs.lo[j], self.inputs.hi[j]);
                    let u = us[k][j];
                    rows.push((vec![(col, 1.0)], (hi - u).min(radius)));
                    rows.push((vec![(col, -1.0)], (u - lo).min(radius)));
                }
            }
            for k in 1..=hz {
                let b = self.stage_bounds(k).expect("stages past 0 are bounded");
                let t = nu + k - 1;
                for i in 0..n {
                    for (s, bound) in [(1.0, b.hi[i]), (-1.0, -b.lo[i])] {
                        if bound.is_finite() {
                            let mut row: Vec<(usize, f64)> = (0..nu).map(|c| (c, s * sens[k][(i, c)])).collect();
                            row.push((t, -1.0));
                            rows.push((row, bound - s * xs[k][i]));
                        }
                    }
                }
                rows.push((vec![(t, -1.0)], 0.0));
            }
            Self::set_inequalities(&mut qp, rows);
            let z = match qp.solve()? {
                QpOutcome::Solved { z, .. } => z,
                QpOutcome::Infeasible => return Err(Error::Solver("SQP subproblem infeasible".into())),
            };
            // model value of the merit after the full step
            let model = {
                let mut v = 0.0;
                for k in 1..=hz {
                    let w = if k == hz { &self.p_n } else { &self.q };
                    let pred: Vec<f64> = (&sens[k] * z.rows(0, nu))
                        .iter()
                        .zip(&xs[k])
                        .map(|(d, x)| d + x)
                        .collect();
                    v += quad(w, &pred, &self.target) + set.penalty * z[nu + k - 1];
                }
                for k in 0..hz {
                    let u: Vec<f64> = (0..m).map(|j| us[k][j] + z[k * m + j]).collect();
                    v += quad(&self.r, &u, &self.u_ref);
                }
                v + quad(&self.q, x0, &self.target)
            };
            let predicted = phi - model;
            let step = z.rows(0, nu).amax();
            if predicted <= set.tol * (1.0 + phi.abs()) || step <= set.tol {
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<Vec<f64>> = (0..hz)
                    .map(|k| (0..m).map(|j| us[k][j] + alpha * z[k * m + j]).collect())
                    .collect();
                let txs = self.rollout(x0, &trial);
                if self.merit(&trial, &txs) <= phi - 1e-4 * alpha * predicted {
                    us = trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            debug!("sqp iteration {it}: merit {phi:.6e}, predicted decrease {predicted:.3e}, step {alpha}");
            if !accepted {
                radius *= 0.25;
                if radius < set.tol {
                    break;
                }
            } else if alpha == 1.0 {
                radius = (2.0 * radius).min(set.trust_radius * 1e3);
            }
        }
        let xs = self.rollout(x0, &us);
        Ok((us, xs, iterations))
    }

    fn solve_nonlinear(&self, x0: &[f64]) -> Result<MpcSolution> {
        let hz = self.horizon();
        let mut starts = Vec::new();
        if let Some(w) = &self.warm {
            starts.push(w.clone());
        }
        if let Ok(lin) = self.solve_linear(x0) {
            starts.push(lin.inputs);
        }
        starts.push(vec![self.u_ref.clone(); hz]);
        let mut best: Option<(f64, MpcSolution)> = None;
        let mut worst_stage = None;
        for start in starts {
            let (inputs, states, iterations) = self.sqp(x0, start)?;
            if let Some(stage) = self.first_violation(&inputs, &states) {
                worst_stage = Some(worst_stage.map_or(stage, |s: usize| s.min(stage)));
                continue;
            }
            let cost = self.cost(&inputs, &states);
            if best.as_ref().map_or(true, |(c, _)| cost < *c) {
                let sol = MpcSolution {
                    input: inputs[0].clone(),
                    inputs,
                    states,
                    cost,
                    model: PlannerModel::Nonlinear,
                    iterations,
                };
                best = Some((cost, sol));
            }
        }
        best.map(|(_, s)| s).ok_or_else(|| Error::PlannerInfeasible {
            stage: worst_stage.unwrap_or(hz),
            reason: format!("no SQP start from {x0:?} reached a feasible input sequence"),
        })
    }
}
