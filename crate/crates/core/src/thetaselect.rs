//! Largest parameter box `[0, θ̄]` for which every planner set, enlarged by
//! the error bound, stays inside the tracker state constraints:
//! `π(X̂^θ) ⊕ O^θ ⊆ X` for all `θ ∈ [0, θ̄]`.
//!
//! One SOS constraint per face `p_i ≥ 0` of `X`, in the indeterminates
//! `(x, x̂, θ)` after substituting `e = x − π(x̂)`:
//!
//! `p_i + Σ_k s_k (p̂_k(x̂) − ĥ_k(θ)) + s_e (V(x − π(x̂), θ) − γ)
//!      − Σ_j s_j θ_j (θ̄_j − θ_j) ∈ Σ`.
//!
//! The products `s_j θ̄_j` are bilinear, so the search alternates between the
//! multipliers (θ̄ fixed) and θ̄ (the `s_j` fixed).

use std::collections::BTreeSet;

use log::{debug, info};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certsynth::Certificate;
use crate::error::{Error, Result};
use crate::models::Benchmark;
use crate::polynomial::{monomials_up_to, Block, PolyVec, Polynomial, Var};
use crate::semialg::{ParametricSet, SemialgebraicSet, ThetaBox};
use crate::sosprog::{ConicBackend, LinExpr, PolyExpr, SolveStatus, SosProgram, SosSolution};

const PRIMAL_POINT_RESIDUAL: f64 = 1e-8;
const SLACK_CAP: f64 = 1.0;

/// Everything the containment certificate needs.
#[derive(Clone, Debug)]
pub struct ContainmentProblem {
    /// Storage function in `(e, θ)`.
    pub v: Polynomial,
    pub gamma: f64,
    /// Tracker state constraints `X` in block `x`.
    pub state_set: SemialgebraicSet,
    pub xhat_set: ParametricSet,
    /// Map of planner states into tracker states.
    pub pi: PolyVec,
    pub theta: ThetaBox,
    pub n: usize,
    pub n_hat: usize,
    /// `e`-quadratic part of `V`, used for variable scaling.
    quadratic: DMatrix<f64>,
}

/// The polynomials of one face constraint, before multipliers are attached.
/// The tracker state is described either by `x` itself or by the error `e`
/// with `x = π(x̂) + e`; the two forms differ by a polynomial change of
/// variables with polynomial inverse.
#[derive(Clone, Debug)]
pub struct ReducedConstraint {
    /// `p_i(x)` or `p_i(π(x̂) + e)`.
    pub face: Polynomial,
    /// `p̂_k(x̂) − ĥ_k(θ)`, nonpositive on the planner set.
    pub planner_rows: Vec<Polynomial>,
    /// `V(x − π(x̂), θ) − γ` or `V(e, θ) − γ`.
    pub error_row: Polynomial,
    /// [`Block::X`] or [`Block::E`].
    pub state_block: Block,
    pub n_theta: usize,
}

impl ReducedConstraint {
    /// Indeterminates `(x or e, x̂, θ)` the constraint lives in.
    pub fn variables(&self, n: usize, n_hat: usize) -> Vec<Var> {
        (0..n)
            .map(|i| self.state_block.var(i))
            .chain((0..n_hat).map(|i| Block::Xhat.var(i)))
            .chain((0..self.n_theta).map(|i| Block::Theta.var(i)))
            .collect()
    }

    /// The certificate polynomial for given multipliers and `θ̄`.
    pub fn expression(&self, s_planner: &[Polynomial], s_error: &Polynomial, s_theta: &[Polynomial], theta_bar: &[f64]) -> Polynomial {
        let mut out = self.face.clone();
        for (s, r) in s_planner.iter().zip(&self.planner_rows) {
            out = &out + &(s * r);
        }
        out = &out + &(s_error * &self.error_row);
        for (j, s) in s_theta.iter().enumerate() {
            let t = Polynomial::var(Block::Theta.var(j));
            let prod = &t * &(Polynomial::constant(theta_bar[j]) - t.clone());
            out = &out - &(s * &prod);
        }
        out
    }
}

impl ContainmentProblem {
    pub fn new(
        cert: &Certificate,
        state_set: SemialgebraicSet,
        xhat_set: ParametricSet,
        pi: PolyVec,
        n_hat: usize,
    ) -> Result<Self> {
        let n = pi.len();
        for r in state_set.residuals() {
            if r.universe().blocks().iter().any(|b| b.block != Block::X) {
                return Err(Error::InvalidSet("state constraints may only involve x".into()));
            }
        }
        if !state_set.equalities.is_empty() {
            return Err(Error::InvalidSet("state constraints must be inequalities".into()));
        }
        Ok(ContainmentProblem {
            v: cert.v.clone(),
            gamma: cert.gamma,
            state_set,
            xhat_set,
            pi,
            theta: cert.theta.clone(),
            n,
            n_hat,
            quadratic: cert.quadratic_form(n),
        })
    }

    pub fn from_benchmark(b: &Benchmark, cert: &Certificate) -> Result<Self> {
        ContainmentProblem::new(cert, b.state_set.clone(), b.xhat_set.clone(), b.pi.clone(), b.n_hat())
    }

    pub fn faces(&self) -> usize {
        self.state_set.inequalities.len()
    }

    fn face_residual(&self, face: usize) -> Result<Polynomial> {
        self.state_set
            .inequalities
            .get(face)
            .map(|r| r.residual())
            .ok_or_else(|| Error::Dimension(format!("no face {face}")))
    }

    /// Face `i` of `X` over `(x, x̂, θ)`, with `e := x − π(x̂)` substituted
    /// into the storage function.
    pub fn reduced_constraint(&self, face: usize) -> Result<ReducedConstraint> {
        let residual = self.face_residual(face)?;
        let e_of_x = PolyVec::vars(Block::X, self.n).sub(&self.pi)?;
        Ok(ReducedConstraint {
            face: -&residual,
            planner_rows: self.xhat_set.symbolic().residuals(),
            error_row: self.v.substitute(Block::E, &e_of_x)? - self.gamma,
            state_block: Block::X,
            n_theta: self.theta.dim(),
        })
    }

    /// Face `i` of `X` over `(e, x̂, θ)` at the tracker state `π(x̂) + e`.
    /// This is the form the solver works with: `e` lives on the small scale
    /// of the error set instead of the scale of `X`.
    pub fn error_form(&self, face: usize) -> Result<ReducedConstraint> {
        let residual = self.face_residual(face)?;
        let x_of_e = self.pi.add(&PolyVec::vars(Block::E, self.n))?;
        let used = residual.universe().dim_of(Block::X).unwrap_or(0);
        let x_of_e = PolyVec::new(x_of_e.iter().take(used).cloned().collect());
        Ok(ReducedConstraint {
            face: -&residual.substitute(Block::X, &x_of_e)?,
            planner_rows: self.xhat_set.symbolic().residuals(),
            error_row: self.v.clone() - self.gamma,
            state_block: Block::E,
            n_theta: self.theta.dim(),
        })
    }

    fn scales(&self) -> Scales {
        let upper = &self.theta.upper;
        let xs = self.xhat_set.instantiate(upper, &self.theta).ok();
        let v0 = self
            .v
            .partial_eval(Block::Theta, upper)
            .partial_eval(Block::E, &vec![0.0; self.n]);
        let level = self.gamma - v0.constant_term();
        let s_inv = self.quadratic.clone().try_inverse();
        let e = (0..self.n)
            .map(|i| match &s_inv {
                Some(si) if si[(i, i)] > 0.0 && level > 0.0 => (si[(i, i)] * level).sqrt(),
                _ => 1.0,
            })
            .collect();
        let xhat = (0..self.n_hat)
            .map(|i| match xs.as_ref().and_then(|s| s.interval_of(Block::Xhat.var(i))) {
                Some((lo, hi)) if lo.is_finite() && hi.is_finite() && lo.abs().max(hi.abs()) > 0.0 => {
                    lo.abs().max(hi.abs())
                }
                _ => 1.0,
            })
            .collect();
        Scales { e, xhat }
    }
}

struct Scales {
    e: Vec<f64>,
    xhat: Vec<f64>,
}

impl Scales {
    fn apply(&self, p: &Polynomial) -> Polynomial {
        p.scale_vars(|v| match v.block {
            Block::E => self.e[v.index as usize],
            Block::Xhat => self.xhat[v.index as usize],
            _ => 1.0,
        })
    }
}

fn normalize(p: &Polynomial) -> Polynomial {
    let c = p.max_abs_coeff();
    if c > 0.0 {
        p.scale(1.0 / c)
    } else {
        p.clone()
    }
}

/// Face constraint in scaled variables, rows normalized.
struct Face {
    face: Polynomial,
    rows: Vec<Polynomial>,
    vars: Vec<Var>,
    /// Parameters the face depends on through its rows.
    thetas: Vec<usize>,
    target: u32,
}

fn even_ceil(d: u32) -> u32 {
    d + d % 2
}

/// Rows reachable from the face through shared variables. Dropping the rest
/// keeps every certificate valid and stops unrelated θ_j from entering it.
fn connected_rows(face: &Polynomial, rows: Vec<Polynomial>) -> Vec<Polynomial> {
    let mut seen: BTreeSet<Var> = face.vars_used().into_iter().collect();
    let mut rest: Vec<(Polynomial, Vec<Var>)> = rows
        .into_iter()
        .map(|r| {
            let v = r.vars_used();
            (r, v)
        })
        .collect();
    let mut kept = Vec::new();
    loop {
        let (hit, miss): (Vec<_>, Vec<_>) = rest.into_iter().partition(|(_, v)| v.iter().any(|x| seen.contains(x)));
        rest = miss;
        if hit.is_empty() {
            break;
        }
        for (r, v) in hit {
            seen.extend(v);
            kept.push(r);
        }
    }
    kept
}

fn prepare(prob: &ContainmentProblem, extra_degree: u32) -> Result<Vec<Face>> {
    let sc = prob.scales();
    (0..prob.faces())
        .map(|i| {
            let rc = prob.error_form(i)?;
            let face = sc.apply(&rc.face);
            let mut rows: Vec<Polynomial> = rc.planner_rows.iter().map(|r| normalize(&sc.apply(r))).collect();
            rows.push(normalize(&sc.apply(&rc.error_row)));
            let rows = connected_rows(&face, rows);
            let used: BTreeSet<Var> = rows.iter().flat_map(|r| r.vars_used()).chain(face.vars_used()).collect();
            let vars: Vec<Var> = rc
                .variables(prob.n, prob.n_hat)
                .into_iter()
                .filter(|v| used.contains(v))
                .collect();
            let thetas = (0..prob.theta.dim()).filter(|&j| used.contains(&Block::Theta.var(j))).collect();
            let target = even_ceil(rows.iter().map(|r| r.degree()).chain([face.degree(), 2]).max().unwrap_or(2)) + extra_degree;
            Ok(Face {
                face,
                rows,
                vars,
                thetas,
                target,
            })
        })
        .collect()
}

/// θ multipliers `s_j` of every face, in scaled variables.
#[derive(Clone, Debug)]
pub struct ThetaMultipliers {
    pub per_face: Vec<Vec<Polynomial>>,
    /// Constant-term slack of each face at the θ̄ they were computed for.
    pub margins: Vec<f64>,
}

/// Adds `face − slack − Σ rows·σ − theta_part` as an SOS constraint, where
/// `theta_part` holds the terms `s_j θ_j (θ̄_j − θ_j)`.
fn add_face(prog: &mut SosProgram, f: &Face, label: String, slack: &LinExpr, theta_part: PolyExpr) {
    let mut expr = PolyExpr::from_poly(&f.face);
    expr.add_scaled(&PolyExpr::from_lin(slack.clone()), -1.0);
    let (sp, _) = prog.s_procedure(&f.rows, &[], &f.vars, f.target);
    expr += &sp;
    expr.add_scaled(&theta_part, -1.0);
    prog.add_sos(expr, label);
}

/// Both steps are degenerate at their optimum; an interior primal point that
/// meets the equalities still certifies what it carries.
fn usable(sol: &SosSolution) -> bool {
    sol.is_optimal() || (sol.status == SolveStatus::NumericalFailure && sol.conic.primal_residual <= PRIMAL_POINT_RESIDUAL)
}

fn theta_var(j: usize) -> Polynomial {
    Polynomial::var(Block::Theta.var(j))
}

/// Multiplier step at fixed `θ̄`: margin-maximizing certificate per face.
/// Returns `None` when some face has no certificate.
pub fn s_step(prob: &ContainmentProblem, theta_bar: &[f64], config: &ThetaConfig, backend: &dyn ConicBackend) -> Result<Option<ThetaMultipliers>> {
    let faces = prepare(prob, config.extra_degree)?;
    let nt = prob.theta.dim();
    let mut per_face = Vec::with_capacity(faces.len());
    let mut margins = Vec::with_capacity(faces.len());
    for (i, f) in faces.iter().enumerate() {
        let mut prog = SosProgram::new();
        let half = (f.target - 2) / 2;
        let s: Vec<_> = f
            .thetas
            .iter()
            .map(|_| prog.new_sos_poly(monomials_up_to(&f.vars, 0, half)))
            .collect();
        let mut tp = PolyExpr::zero();
        for (&j, sj) in f.thetas.iter().zip(&s) {
            let t = theta_var(j);
            let prod = &t * &(Polynomial::constant(theta_bar[j]) - t.clone());
            tp += &sj.expr().mul_poly(&prod);
        }
        // slack on the constant term measures how far θ̄ could still move
        let slack = prog.new_scalar();
        prog.add_nonneg(&LinExpr::constant(SLACK_CAP) - &slack, "slack cap");
        add_face(&mut prog, f, format!("face {}", i + 1), &slack, tp);
        prog.maximize(slack.clone());
        let sol = prog.solve(backend)?;
        let margin = sol.value(&slack);
        debug!("s-step face {} at {theta_bar:?}: {} slack {margin:.3e}", i + 1, sol.status);
        if !usable(&sol) || margin < 0.0 {
            return Ok(None);
        }
        let mut sj = vec![Polynomial::zero(); nt];
        for (&j, d) in f.thetas.iter().zip(&s) {
            sj[j] = sol.poly(d.expr());
        }
        per_face.push(sj);
        margins.push(margin);
    }
    Ok(Some(ThetaMultipliers { per_face, margins }))
}

/// θ̄ step: maximize `Σ θ̄_j` over `floor ≤ θ̄ ≤ upper` with the θ
/// multipliers fixed.
pub fn theta_bar_step(
    prob: &ContainmentProblem,
    mult: &ThetaMultipliers,
    floor: &[f64],
    config: &ThetaConfig,
    backend: &dyn ConicBackend,
) -> Result<Option<Vec<f64>>> {
    let faces = prepare(prob, config.extra_degree)?;
    let nt = prob.theta.dim();
    let mut prog = SosProgram::new();
    let tb: Vec<LinExpr> = (0..nt).map(|_| prog.new_scalar()).collect();
    for (j, t) in tb.iter().enumerate() {
        prog.add_nonneg(t - &LinExpr::constant(floor[j]), format!("th{} lower", j + 1));
        prog.add_nonneg(&LinExpr::constant(prob.theta.upper[j]) - t, format!("th{} upper", j + 1));
    }
    for (i, f) in faces.iter().enumerate() {
        let mut tp = PolyExpr::zero();
        for (j, s) in mult.per_face[i].iter().enumerate() {
            let t = theta_var(j);
            // s θ (θ̄ − θ) = θ̄ · (s θ) − s θ²
            tp += &PolyExpr::poly_times_lin(&(s * &t), &tb[j]);
            tp.add_poly(&(s * &(&t * &t)), -1.0);
        }
        add_face(&mut prog, f, format!("face {}", i + 1), &LinExpr::zero(), tp);
    }
    let mut total = LinExpr::zero();
    for t in &tb {
        total += t;
    }
    prog.maximize(total);
    let sol = prog.solve(backend)?;
    debug!(
        "theta-bar step: {} objective {:.6} (primal residual {:.1e})",
        sol.status, sol.objective, sol.conic.primal_residual
    );
    if !usable(&sol) {
        return Ok(None);
    }
    Ok(Some(
        tb.iter()
            .zip(&prob.theta.upper)
            .zip(floor)
            .map(|((t, &u), &lo)| sol.value(t).clamp(lo, u))
            .collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaConfig {
    pub iterations: usize,
    /// Stop when `Σθ̄` grows by less than this fraction.
    pub rel_tol: f64,
    /// Starting point; defaults to half the upper corner of Θ.
    pub initial: Option<Vec<f64>>,
    /// Halvings of the starting point tried before giving up.
    pub max_halvings: usize,
    /// Degree added to the smallest certificate degree.
    pub extra_degree: u32,
}

impl Default for ThetaConfig {
    fn default() -> Self {
        ThetaConfig {
            iterations: 15,
            rel_tol: 1e-4,
            initial: None,
            max_halvings: 20,
            extra_degree: 0,
        }
    }
}

/// Outcome of the parameter selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSelection {
    pub theta_bar: Vec<f64>,
    /// θ̄ after every iteration, starting with the initial point.
    pub history: Vec<Vec<f64>>,
    pub problem_hash: String,
}

impl ThetaSelection {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<ThetaSelection> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Alternates [`s_step`] and [`theta_bar_step`] from a feasible start.
pub fn select_theta(prob: &ContainmentProblem, config: &ThetaConfig, problem_hash: &str, backend: &dyn ConicBackend) -> Result<ThetaSelection> {
    let mut theta_bar = match &config.initial {
        Some(t) if t.len() == prob.theta.dim() => t.clone(),
        Some(t) => {
            return Err(Error::Dimension(format!(
                "initial parameter has {} entries, expected {}",
                t.len(),
                prob.theta.dim()
            )))
        }
        None => prob.theta.upper.iter().map(|u| 0.5 * u).collect(),
    };
    let mut mult = None;
    for _ in 0..=config.max_halvings {
        if let Some(m) = s_step(prob, &theta_bar, config, backend)? {
            mult = Some(m);
            break;
        }
        info!("no containment certificate at {theta_bar:?}, halving");
        theta_bar.iter_mut().for_each(|t| *t *= 0.5);
    }
    let mut mult = mult.ok_or_else(|| Error::Infeasible("containment infeasible at every starting point tried".into()))?;
    let mut history = vec![theta_bar.clone()];
    for j in 1..=config.iterations {
        let Some(next) = theta_bar_step(prob, &mult, &theta_bar, config, backend)? else {
            info!("iteration {j}: theta-bar step failed, keeping {theta_bar:?}");
            break;
        };
        let before: f64 = theta_bar.iter().sum();
        let after: f64 = next.iter().sum();
        if after < before {
            info!("iteration {j}: no increase, keeping {theta_bar:?}");
            break;
        }
        theta_bar = next;
        history.push(theta_bar.clone());
        info!("iteration {j}: theta-bar {theta_bar:?}");
        if after - before < config.rel_tol * before.abs().max(1e-12) {
            break;
        }
        match s_step(prob, &theta_bar, config, backend)? {
            Some(m) => mult = m,
            None => {
                info!("iteration {j}: multiplier step failed at {theta_bar:?}");
                break;
            }
        }
    }
    Ok(ThetaSelection {
        theta_bar,
        history,
        problem_hash: problem_hash.to_string(),
    })
}
