use log::{debug, info};

use super::scaling::Scaled;
use crate::error::{Error, Result};
use crate::polynomial::{monomials_up_to, Block, PolyVec, Polynomial};
use crate::sosprog::{ConicBackend, DecisionPoly, LinExpr, PolyExpr, SosProgram};

/// Certificates are accepted only with a nonnegative Gram margin.
pub(crate) const ACCEPT_MARGIN: f64 = 0.0;

fn even_ceil(d: u32) -> u32 {
    d + d % 2
}

/// Either a fixed polynomial or an affine expression in decision variables.
#[derive(Clone, Copy)]
pub(crate) enum Term<'a> {
    Fixed(&'a Polynomial),
    Decision(&'a PolyExpr),
}

impl Term<'_> {
    /// Product with a fixed polynomial.
    fn times(&self, p: &Polynomial) -> PolyExpr {
        match self {
            Term::Fixed(q) => PolyExpr::from_poly(&Polynomial::mul(q, p)),
            Term::Decision(e) => e.mul_poly(p),
        }
    }

    fn derivative(&self, block: Block, i: usize) -> TermOwned {
        match self {
            Term::Fixed(q) => TermOwned::Fixed(q.partial(block, i)),
            Term::Decision(e) => TermOwned::Decision(e.derivative(block.var(i))),
        }
    }

    fn to_expr(self) -> PolyExpr {
        match self {
            Term::Fixed(q) => PolyExpr::from_poly(q),
            Term::Decision(e) => e.clone(),
        }
    }
}

pub(crate) enum TermOwned {
    Fixed(Polynomial),
    Decision(PolyExpr),
}

impl TermOwned {
    fn as_term(&self) -> Term<'_> {
        match self {
            TermOwned::Fixed(p) => Term::Fixed(p),
            TermOwned::Decision(e) => Term::Decision(e),
        }
    }
}

/// Product of two terms, at most one of which holds decision variables.
fn bilinear(a: Term<'_>, b: Term<'_>) -> PolyExpr {
    match (a, b) {
        (Term::Fixed(p), other) | (other, Term::Fixed(p)) => other.times(p),
        (Term::Decision(_), Term::Decision(_)) => {
            panic!("bilinear product of two decision terms")
        }
    }
}

/// Degrees used by the tracking constraints.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Degrees {
    pub v: u32,
    pub kappa: u32,
}

impl Degrees {
    /// Total degree of the decrease certificate.
    pub fn decrease_target(&self, sc: &Scaled) -> u32 {
        let df = sc.f.degree();
        let dg = sc.g.degree();
        even_ceil((self.v.max(1) - 1) + df.max(dg + self.kappa)).max(even_ceil(self.v))
    }

    pub fn input_target(&self) -> u32 {
        even_ceil(self.kappa.max(self.v))
    }

    pub fn v_target(&self) -> u32 {
        even_ceil(self.v).max(2)
    }
}

/// Unknowns produced by the γ-step and frozen in the V-step.
#[derive(Clone, Debug)]
pub(crate) struct TrackingPart {
    pub gamma: f64,
    pub kappa: PolyVec,
    pub s2: Polynomial,
    pub s8: Vec<Polynomial>,
    pub margin: f64,
}

/// Adds the decrease constraint and the input-bound constraints:
///
/// `−∂V/∂e·(f + gκ) − s₂(V − γ) + Σ s·(signal rows) + Σ s·(θ rows) ∈ Σ`
/// `h_k − H_k κ + (s₈)_k (V − γ) + Σ s·(rows) ∈ Σ`, for every input row `k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn add_tracking_constraints(
    prog: &mut SosProgram,
    sc: &Scaled,
    deg: Degrees,
    v: Term<'_>,
    gamma: f64,
    kappa: &[Term<'_>],
    s2: Term<'_>,
    s8: &[Term<'_>],
) {
    let n = sc.n;
    let m = kappa.len();
    let target = deg.decrease_target(sc);
    let rows: Vec<Polynomial> = sc
        .signal_rows
        .iter()
        .chain(&sc.theta_rows)
        .cloned()
        .collect();
    let v_minus_gamma = match v {
        Term::Fixed(p) => TermOwned::Fixed(p.clone() - gamma),
        Term::Decision(e) => TermOwned::Decision(e - &Polynomial::constant(gamma)),
    };

    let mut dec = PolyExpr::zero();
    for i in 0..n {
        let dv = v.derivative(Block::E, i);
        dec.add_scaled(&bilinear(dv.as_term(), Term::Fixed(&sc.f[i])), -1.0);
        for (j, k) in kappa.iter().enumerate() {
            let prod = match dv.as_term() {
                Term::Fixed(d) => bilinear(Term::Fixed(&Polynomial::mul(d, &sc.g[(i, j)])), *k),
                Term::Decision(d) => match k {
                    Term::Fixed(kp) => d.mul_poly(&Polynomial::mul(&sc.g[(i, j)], kp)),
                    Term::Decision(_) => panic!("bilinear product of two decision terms"),
                },
            };
            dec.add_scaled(&prod, -1.0);
        }
    }
    dec.add_scaled(&bilinear(s2, v_minus_gamma.as_term()), -1.0);
    let (sp, _) = prog.s_procedure(&rows, &sc.delta_eqs, &sc.vars_all, target);
    dec += &sp;
    prog.add_sos(dec, "decrease");

    let target_u = deg.input_target();
    for (k, (hrow, &hk)) in sc.h_mat.iter().zip(&sc.h).enumerate() {
        let mut expr = PolyExpr::from_poly(&Polynomial::constant(hk));
        for j in 0..m {
            if hrow[j] != 0.0 {
                expr.add_scaled(&kappa[j].to_expr(), -hrow[j]);
            }
        }
        expr += &bilinear(s8[k], v_minus_gamma.as_term());
        let (sp, _) = prog.s_procedure(&rows, &sc.delta_eqs, &sc.vars_all, target_u);
        expr += &sp;
        prog.add_sos(expr, format!("input row {}", k + 1));
    }
}

/// `γ − V + S-procedure(Ω, Θ) ∈ Σ[(e, θ)]`.
pub(crate) fn add_omega_containment(prog: &mut SosProgram, sc: &Scaled, deg: Degrees, v: Term<'_>, gamma: &LinExpr) {
    let mut expr = PolyExpr::from_lin(gamma.clone());
    expr.add_scaled(&v.to_expr(), -1.0);
    let rows: Vec<Polynomial> = sc.omega_rows.iter().chain(&sc.theta_rows).cloned().collect();
    let (sp, _) = prog.s_procedure(&rows, &sc.omega_eqs, &sc.vars_v, deg.v_target());
    expr += &sp;
    prog.add_sos(expr, "initial set");
}

/// Smallest γ with `Ω × Θ ⊆ {V ≤ γ}` certified, for fixed `V`.
pub(crate) fn min_gamma_omega(sc: &Scaled, deg: Degrees, v: &Polynomial, backend: &dyn ConicBackend) -> Result<f64> {
    let mut prog = SosProgram::new();
    let g = prog.new_scalar();
    add_omega_containment(&mut prog, sc, deg, Term::Fixed(v), &g);
    prog.minimize(g.clone());
    let sol = prog.solve(backend)?;
    if !sol.is_optimal() {
        return Err(Error::Infeasible(format!(
            "initial-set containment has no certificate ({})",
            sol.status
        )));
    }
    Ok(sol.value(&g))
}

fn new_free(prog: &mut SosProgram, vars: &[crate::polynomial::Var], degree: u32) -> DecisionPoly {
    prog.new_free_poly(monomials_up_to(vars, 0, degree))
}

fn new_sos(prog: &mut SosProgram, vars: &[crate::polynomial::Var], degree: u32) -> DecisionPoly {
    prog.new_sos_poly(monomials_up_to(vars, 0, degree / 2))
}

/// Feasibility of the tracking constraints at fixed `V` and `γ`, by margin
/// maximization. Returns the unknowns when the margin is nonnegative.
pub(crate) fn tracking_at(
    sc: &Scaled,
    deg: Degrees,
    v: &Polynomial,
    gamma: f64,
    m: usize,
    backend: &dyn ConicBackend,
) -> Result<Option<TrackingPart>> {
    let mut prog = SosProgram::new();
    let kappa: Vec<DecisionPoly> = (0..m).map(|_| new_free(&mut prog, &sc.vars_all, deg.kappa)).collect();
    let s2 = new_free(&mut prog, &sc.vars_all, deg.decrease_target(sc) - deg.v);
    let s8_deg = deg.input_target().saturating_sub(deg.v);
    let s8: Vec<DecisionPoly> = (0..sc.h.len()).map(|_| new_sos(&mut prog, &sc.vars_all, s8_deg)).collect();
    let kt: Vec<Term> = kappa.iter().map(|k| Term::Decision(k.expr())).collect();
    let s8t: Vec<Term> = s8.iter().map(|s| Term::Decision(s.expr())).collect();
    add_tracking_constraints(&mut prog, sc, deg, Term::Fixed(v), gamma, &kt, Term::Decision(s2.expr()), &s8t);
    let t0 = std::time::Instant::now();
    let sol = prog.solve(backend)?;
    let margin = sol.margin.unwrap_or(f64::NEG_INFINITY);
    debug!(
        "tracking feasibility at gamma {gamma:.6}: {} margin {margin:.3e} ({} iterations, {:.1}s)",
        sol.conic.status,
        sol.conic.iterations,
        t0.elapsed().as_secs_f64()
    );
    if !sol.is_optimal() || margin < ACCEPT_MARGIN {
        return Ok(None);
    }
    Ok(Some(TrackingPart {
        gamma,
        kappa: PolyVec::new(kappa.iter().map(|k| sol.decision(k)).collect::<Result<_>>()?),
        s2: sol.decision(&s2)?,
        s8: s8.iter().map(|s| sol.decision(s)).collect::<Result<_>>()?,
        margin,
    }))
}

/// γ-step: minimizes γ over the tracking and initial-set constraints with `V`
/// fixed. `known` is a feasible point for this `V` (from the previous V-step)
/// used as the upper end of the search.
pub(crate) fn gamma_step(
    sc: &Scaled,
    deg: Degrees,
    v: &Polynomial,
    m: usize,
    known: Option<TrackingPart>,
    settings: &GammaSearch,
    backend: &dyn ConicBackend,
) -> Result<TrackingPart> {
    let floor = min_gamma_omega(sc, deg, v, backend)?;
    let lo0 = floor + settings.backoff * floor.abs().max(1e-12);
    debug!("initial-set bound on gamma: {floor:.8}");
    if let Some(p) = tracking_at(sc, deg, v, lo0, m, backend)? {
        return Ok(p);
    }
    let mut lo = lo0;
    let mut hi = match known {
        Some(k) if k.gamma > lo => k,
        _ => {
            let mut found = None;
            let mut g = lo0;
            for _ in 0..settings.max_expansions {
                g = lo0 + (g - lo0).max(lo0.abs().max(1e-6)) * 2.0;
                if let Some(p) = tracking_at(sc, deg, v, g, m, backend)? {
                    found = Some(p);
                    break;
                }
                lo = g;
            }
            found.ok_or_else(|| {
                Error::Infeasible(format!(
                    "tracking constraints infeasible for gamma up to {g:.4e}"
                ))
            })?
        }
    };
    for _ in 0..settings.max_bisections {
        if hi.gamma - lo <= settings.rel_tol * hi.gamma.abs() {
            break;
        }
        let mid = 0.5 * (lo + hi.gamma);
        match tracking_at(sc, deg, v, mid, m, backend)? {
            Some(p) => hi = p,
            None => lo = mid,
        }
    }
    info!("gamma-step: gamma = {:.6} (bracket low {lo:.6})", hi.gamma);
    Ok(hi)
}

#[derive(Clone, Debug)]
pub(crate) struct GammaSearch {
    pub rel_tol: f64,
    pub max_bisections: usize,
    pub max_expansions: usize,
    pub backoff: f64,
}

/// Result of a V-step.
pub(crate) struct VStepResult {
    pub v: Polynomial,
    pub margin: f64,
}

/// V-step: new storage function with κ, γ, s₂, s₈ frozen, satisfying the
/// monotonicity, tracking, initial-set and descent constraints, found by
/// margin maximization.
pub(crate) fn v_step(
    sc: &Scaled,
    deg: Degrees,
    v_prev: &Polynomial,
    fixed: &TrackingPart,
    backend: &dyn ConicBackend,
) -> Result<Option<VStepResult>> {
    let mut prog = SosProgram::new();
    let v = new_free(&mut prog, &sc.vars_v, deg.v);
    let vt = Term::Decision(v.expr());

    let target_c = even_ceil(deg.v.saturating_sub(1)).max(2);
    for i in 0..sc.n_theta {
        let mut expr = v.expr().derivative(Block::Theta.var(i)).scale(-1.0);
        let (sp, _) = prog.s_procedure(&sc.theta_rows, &[], &sc.vars_v, target_c);
        expr += &sp;
        prog.add_sos(expr, format!("monotone th{}", i + 1));
    }

    let kt: Vec<Term> = fixed.kappa.iter().map(Term::Fixed).collect();
    let s8t: Vec<Term> = fixed.s8.iter().map(Term::Fixed).collect();
    add_tracking_constraints(&mut prog, sc, deg, vt, fixed.gamma, &kt, Term::Fixed(&fixed.s2), &s8t);

    add_omega_containment(&mut prog, sc, deg, vt, &LinExpr::constant(fixed.gamma));

    let target_d = deg.v_target();
    let s0 = new_sos(&mut prog, &sc.vars_v, target_d.saturating_sub(v_prev.degree()));
    let mut desc = s0.expr().mul_poly(&(v_prev.clone() - fixed.gamma)).scale(-1.0);
    desc += &(v.expr() - &Polynomial::constant(fixed.gamma));
    let (sp, _) = prog.s_procedure(&sc.theta_rows, &[], &sc.vars_v, target_d);
    desc += &sp;
    prog.add_sos(desc, "descent");

    let t0 = std::time::Instant::now();
    let sol = prog.solve(backend)?;
    let margin = sol.margin.unwrap_or(f64::NEG_INFINITY);
    debug!(
        "V-step: {} margin {margin:.3e} ({} iterations, {:.1}s)",
        sol.conic.status,
        sol.conic.iterations,
        t0.elapsed().as_secs_f64()
    );
    if !sol.is_optimal() || margin < ACCEPT_MARGIN {
        return Ok(None);
    }
    Ok(Some(VStepResult {
        v: sol.decision(&v)?,
        margin,
    }))
}
