use std::collections::BTreeMap;

use log::debug;
use nalgebra::DMatrix;

use super::basis::gram_basis;
use super::conic::{tri_index, ConicBackend, ConicProblem, ConicSolution, SolveStatus};
use super::expr::{LinExpr, PolyExpr, VarId};
use crate::error::{Error, Result};
use crate::polynomial::{Monomial, Polynomial};

/// A polynomial with unknown coefficients: either free (one scalar per basis
/// monomial) or SOS (`zᵀ G z` with a PSD Gram matrix over the basis `z`).
#[derive(Clone, Debug)]
pub struct DecisionPoly {
    basis: Vec<Monomial>,
    kind: DecisionKind,
    expr: PolyExpr,
}

#[derive(Clone, Debug)]
enum DecisionKind {
    Free,
    Sos(usize),
}

impl DecisionPoly {
    pub fn expr(&self) -> &PolyExpr {
        &self.expr
    }

    /// Monomial basis: the coefficient monomials of a free polynomial, or the
    /// half-degree vector `z` of an SOS one.
    pub fn basis(&self) -> &[Monomial] {
        &self.basis
    }

    pub fn is_sos(&self) -> bool {
        matches!(self.kind, DecisionKind::Sos(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstraintId(usize);

#[derive(Clone, Copy, Debug)]
enum VarKind {
    Free(usize),
    Gram { block: usize, a: usize, b: usize },
}

#[derive(Clone, Debug)]
struct GramBlock {
    basis: Vec<Monomial>,
    first: VarId,
}

#[derive(Clone, Debug)]
enum ConstraintKind {
    /// Expression is SOS with Gram block (None when the expression vanishes).
    Sos(Option<usize>),
    /// Every coefficient vanishes.
    Zero,
    /// Scalar `≥ 0` via a 1×1 block.
    Nonneg(usize),
}

#[derive(Clone, Debug)]
struct Constraint {
    label: String,
    expr: PolyExpr,
    kind: ConstraintKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Sense {
    Minimize,
    Maximize,
}

/// Declarative SOS program: decision polynomials, SOS / zero / scalar
/// constraints and a linear objective.
#[derive(Clone, Debug)]
pub struct SosProgram {
    kinds: Vec<VarKind>,
    n_free: usize,
    grams: Vec<GramBlock>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
    sense: Sense,
    has_objective: bool,
    margin: Option<VarId>,
}

impl Default for SosProgram {
    fn default() -> Self {
        SosProgram::new()
    }
}

/// Feasibility problems are solved as "maximize the uniform Gram margin `t`
/// (capped here)"; a negative optimum means no SOS certificate exists.
pub const FEASIBILITY_MARGIN_CAP: f64 = 1.0;

/// Margins above this (negative) value still count as feasible.
pub const FEASIBILITY_TOL: f64 = -1e-8;

/// Largest relative equality residual of an unconverged iterate that is still
/// accepted as a feasible point.
const FEASIBLE_POINT_RESIDUAL: f64 = 1e-8;

impl SosProgram {
    pub fn new() -> Self {
        SosProgram {
            kinds: Vec::new(),
            n_free: 0,
            grams: Vec::new(),
            constraints: Vec::new(),
            objective: LinExpr::zero(),
            sense: Sense::Minimize,
            has_objective: false,
            margin: None,
        }
    }

    fn push_free(&mut self) -> VarId {
        let id = self.kinds.len() as VarId;
        self.kinds.push(VarKind::Free(self.n_free));
        self.n_free += 1;
        id
    }

    fn push_gram(&mut self, basis: Vec<Monomial>) -> usize {
        let block = self.grams.len();
        let first = self.kinds.len() as VarId;
        let n = basis.len();
        for a in 0..n {
            for b in 0..=a {
                self.kinds.push(VarKind::Gram { block, a, b });
            }
        }
        self.grams.push(GramBlock { basis, first });
        block
    }

    fn gram_var(&self, block: usize, a: usize, b: usize) -> VarId {
        let (a, b) = if a >= b { (a, b) } else { (b, a) };
        self.grams[block].first + tri_index(a, b) as VarId
    }

    /// `zᵀ G z` as an expression in the Gram entries.
    fn gram_expr(&self, block: usize) -> PolyExpr {
        let z = &self.grams[block].basis;
        let mut terms = Vec::with_capacity(z.len() * (z.len() + 1) / 2);
        for a in 0..z.len() {
            for b in 0..=a {
                let mult = if a == b { 1.0 } else { 2.0 };
                terms.push((z[a].mul(&z[b]), LinExpr::scaled_var(self.gram_var(block, a, b), mult)));
            }
        }
        PolyExpr::from_terms(terms)
    }

    pub fn nvars(&self) -> usize {
        self.kinds.len()
    }

    /// New unconstrained scalar.
    pub fn new_scalar(&mut self) -> LinExpr {
        LinExpr::var(self.push_free())
    }

    /// Polynomial with a free coefficient per basis monomial.
    pub fn new_free_poly(&mut self, basis: Vec<Monomial>) -> DecisionPoly {
        let vars: Vec<VarId> = basis.iter().map(|_| self.push_free()).collect();
        let expr = PolyExpr::from_terms(
            basis
                .iter()
                .zip(&vars)
                .map(|(m, &v)| (m.clone(), LinExpr::var(v))),
        );
        DecisionPoly {
            basis,
            kind: DecisionKind::Free,
            expr,
        }
    }

    /// SOS polynomial `zᵀ G z`, `G ⪰ 0`, over the half-degree basis `z`.
    pub fn new_sos_poly(&mut self, half_basis: Vec<Monomial>) -> DecisionPoly {
        let block = self.push_gram(half_basis.clone());
        let expr = self.gram_expr(block);
        DecisionPoly {
            basis: half_basis,
            kind: DecisionKind::Sos(block),
            expr,
        }
    }

    /// S-procedure terms for a set `{r_k ≤ 0, q_l = 0}` inside a certificate of
    /// total degree `target`: returns `Σ s_k r_k + Σ λ_l q_l` with SOS `s_k` and
    /// free `λ_l` over `vars`, each of the largest degree that fits. Rows whose
    /// degree exceeds `target` get no multiplier.
    pub fn s_procedure(
        &mut self,
        ineqs: &[Polynomial],
        eqs: &[Polynomial],
        vars: &[crate::polynomial::Var],
        target: u32,
    ) -> (PolyExpr, Vec<DecisionPoly>) {
        let mut sum = PolyExpr::zero();
        let mut mults = Vec::new();
        for r in ineqs {
            let d = r.degree();
            if d > target || r.is_zero() {
                continue;
            }
            let half = (target - d) / 2;
            let s = self.new_sos_poly(crate::polynomial::monomials_up_to(vars, 0, half));
            sum += &s.expr.mul_poly(r);
            mults.push(s);
        }
        for q in eqs {
            let d = q.degree();
            if d > target || q.is_zero() {
                continue;
            }
            let l = self.new_free_poly(crate::polynomial::monomials_up_to(vars, 0, target - d));
            sum += &l.expr.mul_poly(q);
            mults.push(l);
        }
        (sum, mults)
    }

    /// Requires `expr ∈ Σ`. The Gram basis is derived from the support.
    pub fn add_sos(&mut self, expr: PolyExpr, label: impl Into<String>) -> ConstraintId {
        let basis = gram_basis(&expr.support());
        let block = (!basis.is_empty()).then(|| self.push_gram(basis));
        self.push_constraint(label.into(), expr, ConstraintKind::Sos(block))
    }

    /// Requires every coefficient of `expr` to vanish.
    pub fn add_zero(&mut self, expr: PolyExpr, label: impl Into<String>) -> ConstraintId {
        self.push_constraint(label.into(), expr, ConstraintKind::Zero)
    }

    /// Requires the scalar `l ≥ 0`.
    pub fn add_nonneg(&mut self, l: LinExpr, label: impl Into<String>) -> ConstraintId {
        let block = self.push_gram(vec![Monomial::one()]);
        self.push_constraint(label.into(), PolyExpr::from_lin(l), ConstraintKind::Nonneg(block))
    }

    /// Requires the scalar `l = 0`.
    pub fn add_eq(&mut self, l: LinExpr, label: impl Into<String>) -> ConstraintId {
        self.add_zero(PolyExpr::from_lin(l), label)
    }

    fn push_constraint(&mut self, label: String, expr: PolyExpr, kind: ConstraintKind) -> ConstraintId {
        self.constraints.push(Constraint { label, expr, kind });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn minimize(&mut self, l: LinExpr) {
        self.objective = l;
        self.sense = Sense::Minimize;
        self.has_objective = true;
    }

    pub fn maximize(&mut self, l: LinExpr) {
        self.objective = l;
        self.sense = Sense::Maximize;
        self.has_objective = true;
    }

    /// Adds a uniform margin `t`: every SOS constraint's Gram matrix becomes
    /// `G + t I` with `G ⪰ 0`, and `t ≤ cap`. Returns `t`; pair it with
    /// `maximize(t)` to maximize feasibility.
    pub fn enable_margin(&mut self, cap: f64) -> LinExpr {
        if let Some(t) = self.margin {
            return LinExpr::var(t);
        }
        let t = self.push_free();
        self.margin = Some(t);
        let tl = LinExpr::var(t);
        self.add_nonneg(&LinExpr::constant(cap) - &tl, "margin cap");
        tl
    }

    pub fn margin_var(&self) -> Option<LinExpr> {
        self.margin.map(LinExpr::var)
    }

    pub fn constraint_label(&self, id: ConstraintId) -> &str {
        &self.constraints[id.0].label
    }

    /// Gram basis of an SOS constraint, if it has one.
    pub fn constraint_basis(&self, id: ConstraintId) -> Option<&[Monomial]> {
        match self.constraints[id.0].kind {
            ConstraintKind::Sos(Some(b)) => Some(&self.grams[b].basis),
            _ => None,
        }
    }

    fn conic_index(&self, offsets: &[usize], v: VarId) -> usize {
        match self.kinds[v as usize] {
            VarKind::Free(i) => i,
            VarKind::Gram { block, a, b } => offsets[block] + tri_index(a, b),
        }
    }

    /// Translates to a conic problem. Rows follow constraint order and, within
    /// a constraint, graded lexicographic monomial order.
    pub fn compile(&self) -> Result<ConicProblem> {
        let blocks: Vec<usize> = self.grams.iter().map(|g| g.basis.len()).collect();
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut off = self.n_free;
        for &n in &blocks {
            offsets.push(off);
            off += n * (n + 1) / 2;
        }
        let mut equalities: Vec<(usize, usize, f64)> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for c in &self.constraints {
            let mut rows: BTreeMap<Monomial, LinExpr> = c
                .expr
                .sorted_terms()
                .into_iter()
                .map(|(m, l)| (m.clone(), l.clone()))
                .collect();
            match c.kind {
                ConstraintKind::Sos(Some(block)) => {
                    let g = self.gram_expr(block);
                    for (m, l) in g.sorted_terms() {
                        rows.entry(m.clone()).or_default().add_scaled(l, -1.0);
                    }
                    if let Some(t) = self.margin {
                        for z in &self.grams[block].basis {
                            rows.entry(z.mul(z))
                                .or_default()
                                .add_scaled(&LinExpr::var(t), -1.0);
                        }
                    }
                }
                ConstraintKind::Nonneg(block) => {
                    rows.entry(Monomial::one())
                        .or_default()
                        .add_scaled(&LinExpr::var(self.gram_var(block, 0, 0)), -1.0);
                }
                ConstraintKind::Sos(None) | ConstraintKind::Zero => {}
            }
            for (m, l) in rows {
                if l.is_constant() {
                    if l.constant.abs() > 1e-9 {
                        return Err(Error::Infeasible(format!(
                            "{}: coefficient of {m} cannot be matched",
                            c.label
                        )));
                    }
                    continue;
                }
                let r = rhs.len();
                let mut ents: Vec<(usize, f64)> = l
                    .terms()
                    .iter()
                    .map(|&(v, k)| (self.conic_index(&offsets, v), k))
                    .collect();
                ents.sort_by_key(|e| e.0);
                for (v, k) in ents {
                    equalities.push((r, v, k));
                }
                rhs.push(-l.constant);
            }
        }
        let sign = if self.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let mut objective: Vec<(usize, f64)> = self
            .objective
            .terms()
            .iter()
            .map(|&(v, k)| (self.conic_index(&offsets, v), sign * k))
            .collect();
        objective.sort_by_key(|e| e.0);
        let p = ConicProblem {
            free: self.n_free,
            blocks,
            equalities,
            rhs,
            objective,
        };
        p.validate()?;
        Ok(p)
    }

    /// Compiles and solves. Without an objective the program is treated as a
    /// feasibility problem and solved by margin maximization.
    pub fn solve(&self, backend: &dyn ConicBackend) -> Result<SosSolution> {
        let feasibility = !self.has_objective;
        let prog = if feasibility {
            let mut p = self.clone();
            let t = p.enable_margin(FEASIBILITY_MARGIN_CAP);
            p.maximize(t);
            p
        } else {
            self.clone()
        };
        let conic = prog.compile()?;
        debug!(
            "solving SOS program: {} free, {} blocks (max order {}), {} rows",
            conic.free,
            conic.blocks.len(),
            conic.blocks.iter().max().copied().unwrap_or(0),
            conic.rows()
        );
        let sol = backend.solve(&conic)?;
        let offsets = conic.block_offsets();
        let values: Vec<f64> = (0..prog.kinds.len())
            .map(|v| sol.x[prog.conic_index(&offsets, v as VarId)])
            .collect();
        let margin = prog.margin.map(|t| values[t as usize]);
        let mut status = sol.status;
        if feasibility && status == SolveStatus::Optimal && margin.unwrap_or(0.0) < FEASIBILITY_TOL {
            status = SolveStatus::Infeasible;
        }
        // A primal point that satisfies the equalities with a positive margin
        // certifies feasibility even if the solver could not close the gap.
        if feasibility
            && status == SolveStatus::NumericalFailure
            && sol.primal_residual <= FEASIBLE_POINT_RESIDUAL
            && margin.unwrap_or(0.0) > 0.0
        {
            status = SolveStatus::Optimal;
        }
        let objective = prog.objective.eval(|v| values[v as usize]);
        Ok(SosSolution {
            status,
            values,
            objective,
            margin,
            conic: sol,
            program: prog,
        })
    }
}

/// Solution of an [`SosProgram`], with access to recovered polynomials.
#[derive(Clone, Debug)]
pub struct SosSolution {
    pub status: SolveStatus,
    values: Vec<f64>,
    /// Objective value of the program as declared (maximization not negated).
    pub objective: f64,
    /// Optimal margin `t` when margins are enabled.
    pub margin: Option<f64>,
    pub conic: ConicSolution,
    program: SosProgram,
}

impl SosSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, l: &LinExpr) -> f64 {
        l.eval(|v| self.values[v as usize])
    }

    pub fn poly(&self, e: &PolyExpr) -> Polynomial {
        e.eval(|v| self.values[v as usize])
    }

    /// Recovered decision polynomial; SOS ones are expanded from their Gram matrix.
    pub fn decision(&self, d: &DecisionPoly) -> Result<Polynomial> {
        if !self.is_optimal() {
            return Err(Error::NotOptimal(self.status.to_string()));
        }
        Ok(self.poly(&d.expr))
    }

    fn gram_of_block(&self, block: usize) -> DMatrix<f64> {
        let n = self.program.grams[block].basis.len();
        DMatrix::from_fn(n, n, |a, b| self.values[self.program.gram_var(block, a, b) as usize])
    }

    /// Gram matrix of an SOS decision polynomial.
    pub fn gram(&self, d: &DecisionPoly) -> Option<DMatrix<f64>> {
        match d.kind {
            DecisionKind::Sos(b) => Some(self.gram_of_block(b)),
            DecisionKind::Free => None,
        }
    }

    /// Gram matrix certifying an SOS constraint (margin included).
    pub fn constraint_gram(&self, id: ConstraintId) -> Option<DMatrix<f64>> {
        match self.program.constraints.get(id.0)?.kind {
            ConstraintKind::Sos(Some(b)) => {
                let mut g = self.gram_of_block(b);
                if let Some(t) = self.margin {
                    for i in 0..g.nrows() {
                        g[(i, i)] += t;
                    }
                }
                Some(g)
            }
            _ => None,
        }
    }

    /// Recovered value of an SOS constraint's expression.
    pub fn constraint_poly(&self, id: ConstraintId) -> Polynomial {
        self.poly(&self.program.constraints[id.0].expr)
    }

    /// Largest coefficient of `expr − zᵀ G z` (coefficient-matching residual).
    pub fn matching_residual(&self, id: ConstraintId) -> f64 {
        let p = self.constraint_poly(id);
        let Some(g) = self.constraint_gram(id) else {
            return p.max_abs_coeff();
        };
        let z = self.program.constraint_basis(id).unwrap_or(&[]);
        let mut terms = Vec::new();
        for a in 0..z.len() {
            for b in 0..z.len() {
                terms.push((z[a].mul(&z[b]), g[(a, b)]));
            }
        }
        (&p - &Polynomial::from_terms(terms)).max_abs_coeff()
    }
}
