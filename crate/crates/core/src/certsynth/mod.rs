//! Parametric error bounds `O^θ = {e : V(e, θ) ≤ γ}` and tracking controllers
//! `κ`, by alternating a γ-step (controller and level, `V` fixed) with a
//! V-step (storage function, controller fixed).

mod dynamics;
mod scaling;
mod steps;

use std::time::Instant;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dynamics::{build_error_dynamics, ErrorDynamics};
use scaling::Scaled;
use steps::{Degrees, GammaSearch, TrackingPart};

use crate::error::{Error, Result};
use crate::linalg;
use crate::polynomial::{Block, Monomial, Point, PolyVec, Polynomial};
use crate::semialg::{ParametricSet, Polytope, SemialgebraicSet, ThetaBox};
use crate::sosprog::ConicBackend;

/// Everything the synthesis needs: error dynamics and the sets of the
/// planner signals, disturbances, parameters, initial errors and inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisProblem {
    pub dynamics: ErrorDynamics,
    pub n_hat: usize,
    pub m_hat: usize,
    pub n_delta: usize,
    /// Planner states `p̂_x(x̂) ≤ ĥ_x(θ)`.
    pub xhat_set: ParametricSet,
    /// Planner inputs `p̂_u(û) ≤ ĥ_u(θ)`.
    pub uhat_set: ParametricSet,
    pub delta_set: SemialgebraicSet,
    pub theta: ThetaBox,
    /// Initial errors Ω.
    pub omega: SemialgebraicSet,
    /// Tracker inputs `H u ≤ h`.
    pub input: Polytope,
}

impl SynthesisProblem {
    pub fn validate(&self) -> Result<()> {
        let m = self.dynamics.m();
        if self.input.dim() != m && self.input.rows() > 0 {
            return Err(Error::Dimension(format!(
                "input polytope has {} columns for {m} inputs",
                self.input.dim()
            )));
        }
        for p in self.omega.residuals() {
            if p.universe().blocks().iter().any(|b| b.block != Block::E) {
                return Err(Error::InvalidSet("initial set may only constrain e".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }

    pub fn n(&self) -> usize {
        self.dynamics.n()
    }

    pub fn m(&self) -> usize {
        self.dynamics.m()
    }
}

/// How the initial storage function is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum InitMethod {
    /// Riccati solution of the linearization with weights `diag(q)`, `diag(r)`.
    Riccati { q: Vec<f64>, r: Vec<f64> },
    /// Lyapunov solution of the open-loop linearization with weight `diag(q)`.
    Lyapunov { q: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub v_degree: u32,
    pub kappa_degree: u32,
    pub iterations: usize,
    /// Stop when γ improves by less than this fraction.
    pub rel_tol: f64,
    /// Relative width at which the γ search stops.
    pub gamma_tol: f64,
    pub max_bisections: usize,
    /// Relative amount added to the initial-set bound on γ before testing it.
    pub gamma_backoff: f64,
    pub init: InitMethod,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            v_degree: 2,
            kappa_degree: 3,
            iterations: 10,
            rel_tol: 1e-4,
            gamma_tol: 2e-3,
            max_bisections: 12,
            gamma_backoff: 1e-6,
            init: InitMethod::Riccati {
                q: Vec::new(),
                r: Vec::new(),
            },
        }
    }
}

/// The triple `(V, κ, γ)` with its validity box and bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Storage function in `(e, θ)`.
    pub v: Polynomial,
    /// Controller in `(e, x̂, û, δ, θ)`.
    pub kappa: PolyVec,
    pub gamma: f64,
    pub theta: ThetaBox,
    pub v_degree: u32,
    pub kappa_degree: u32,
    pub problem_hash: String,
    /// γ after each γ-step.
    pub history: Vec<f64>,
}

impl Certificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Certificate> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn v_at(&self, e: &[f64], theta: &[f64]) -> f64 {
        self.v
            .eval_unchecked(&Point::new().with(Block::E, e).with(Block::Theta, theta))
    }

    pub fn kappa_at(&self, pt: &Point) -> Vec<f64> {
        self.kappa.eval_unchecked(pt)
    }

    /// `V(·, θ) − γ`, nonpositive exactly on `O^θ`.
    pub fn error_bound_at(&self, theta: &[f64]) -> Polynomial {
        self.v.partial_eval(Block::Theta, theta) - self.gamma
    }

    /// Matrix `S` of the `e`-quadratic part of `V`.
    pub fn quadratic_form(&self, n: usize) -> DMatrix<f64> {
        Scaled::quadratic_part(&self.v, n)
    }
}

/// Matrix of the `e`-quadratic part of a polynomial in `e`.
pub fn quadratic_part(v: &Polynomial, n: usize) -> DMatrix<f64> {
    Scaled::quadratic_part(v, n)
}

fn diag_or(values: &[f64], n: usize, default: f64) -> DMatrix<f64> {
    let d: Vec<f64> = (0..n).map(|i| values.get(i).copied().unwrap_or(default)).collect();
    DMatrix::from_diagonal(&DVector::from_vec(d))
}

/// Linearization `(A, B)` of the error dynamics at `e = 0` with all planner
/// signals and disturbances at zero.
pub fn linearize(problem: &SynthesisProblem) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = &problem.dynamics;
    let n = d.n();
    let m = d.m();
    let pt = Point::new()
        .with(Block::E, &vec![0.0; n])
        .with(Block::Xhat, &vec![0.0; problem.n_hat])
        .with(Block::Uhat, &vec![0.0; problem.m_hat])
        .with(Block::Delta, &vec![0.0; problem.n_delta]);
    let a = DMatrix::from_fn(n, n, |i, j| d.f_e[i].partial(Block::E, j).eval_unchecked(&pt));
    let b = DMatrix::from_fn(n, m, |i, j| d.g_e[(i, j)].eval_unchecked(&pt));
    (a, b)
}

fn quadratic(s: &DMatrix<f64>) -> Polynomial {
    let n = s.nrows();
    let mut terms = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let m = Monomial::var(Block::E.var(i)).mul(&Monomial::var(Block::E.var(j)));
            terms.push((m, s[(i, j)]));
        }
    }
    Polynomial::from_terms(terms)
}

/// θ-independent quadratic `V⁰ = eᵀ S e` from the linearized error dynamics,
/// normalized so that the certified maximum of `V⁰` over Ω is 1.
pub fn initialize_v(
    problem: &SynthesisProblem,
    config: &SynthesisConfig,
    backend: &dyn ConicBackend,
) -> Result<Polynomial> {
    let n = problem.n();
    let m = problem.m();
    let (a, b) = linearize(problem);
    let s = match &config.init {
        InitMethod::Riccati { q, r } if m > 0 => {
            linalg::care(&a, &b, &diag_or(q, n, 1.0), &diag_or(r, m, 1.0))?
        }
        InitMethod::Riccati { q, .. } | InitMethod::Lyapunov { q } => {
            if a.complex_eigenvalues().iter().any(|l| l.re >= 0.0) {
                return Err(Error::Initialization(
                    "open-loop linearization is not stable and no input is available".into(),
                ));
            }
            linalg::lyapunov(&a, &diag_or(q, n, 1.0))?
        }
    };
    if s.symmetric_eigenvalues().min() <= 0.0 {
        return Err(Error::Initialization("initial quadratic form is not positive definite".into()));
    }
    let v0 = quadratic(&s);
    let sc = Scaled::new(problem, &s, 1.0)?;
    let deg = Degrees {
        v: 2,
        kappa: config.kappa_degree,
    };
    let level = steps::min_gamma_omega(&sc, deg, &sc.to_scaled(&v0), backend)?;
    if level > 1e-12 {
        Ok(v0.scale(1.0 / level))
    } else {
        Ok(v0)
    }
}

/// Alternates γ-steps and V-steps starting from `v0`.
pub fn synthesize(
    problem: &SynthesisProblem,
    v0: &Polynomial,
    config: &SynthesisConfig,
    backend: &dyn ConicBackend,
) -> Result<Certificate> {
    problem.validate()?;
    let n = problem.n();
    let m = problem.m();
    let started = Instant::now();
    let s0 = Scaled::quadratic_part(v0, n);
    let sc = Scaled::new(problem, &s0, 1.0)?;
    let deg = Degrees {
        v: config.v_degree,
        kappa: config.kappa_degree,
    };
    let search = GammaSearch {
        rel_tol: config.gamma_tol,
        max_bisections: config.max_bisections,
        max_expansions: 12,
        backoff: config.gamma_backoff,
    };

    let mut v = sc.to_scaled(v0);
    let mut history: Vec<f64> = Vec::new();
    let mut known: Option<TrackingPart> = None;
    // (V, γ-step result) of the best certificate so far
    let mut current: Option<(Polynomial, TrackingPart)> = None;
    let rounds = config.iterations.max(1);
    for j in 1..=rounds {
        let step = steps::gamma_step(&sc, deg, &v, m, known.take(), &search, backend).map_err(|e| {
            if j == 1 {
                Error::Initialization(format!("initial storage function admits no certificate: {e}"))
            } else {
                e
            }
        })?;
        info!(
            "iteration {j}: gamma {:.6}, margin {:.2e} ({:.0}s elapsed)",
            step.gamma,
            step.margin,
            started.elapsed().as_secs_f64()
        );
        let improved = match history.last() {
            Some(&g) if step.gamma > g => {
                info!("iteration {j}: no decrease, keeping the previous certificate");
                break;
            }
            Some(&g) => (g - step.gamma) / g.abs().max(1e-300),
            None => f64::INFINITY,
        };
        history.push(step.gamma);
        current = Some((v.clone(), step.clone()));
        if improved < config.rel_tol || config.iterations == 0 {
            break;
        }
        match steps::v_step(&sc, deg, &v, &step, backend)? {
            Some(r) => {
                info!("iteration {j}: V-step margin {:.3e}", r.margin);
                v = r.v;
                known = Some(step);
            }
            None => {
                warn!("iteration {j}: V-step infeasible, keeping the previous storage function");
                break;
            }
        }
    }
    let (v, fin) = current.expect("at least one gamma-step runs");
    Ok(Certificate {
        v: sc.from_scaled(&v),
        kappa: sc.kappa_from_scaled(&fin.kappa),
        gamma: fin.gamma,
        theta: problem.theta.clone(),
        v_degree: config.v_degree,
        kappa_degree: config.kappa_degree,
        problem_hash: problem.hash()?,
        history,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::polynomial::PolyMat;
    use crate::semialg::ParametricRhs;
    use crate::sosprog::InteriorPoint;

    fn sq(b: Block, i: usize) -> Polynomial {
        Polynomial::monomial(Monomial::var_pow(b.var(i), 2), 1.0)
    }

    fn double_integrator() -> SynthesisProblem {
        let th = ThetaBox::new(vec![1.0]).unwrap();
        let t = Polynomial::var(Block::Theta.var(0));
        let f = PolyVec::new(vec![Polynomial::var(Block::X.var(1)), Polynomial::zero()]);
        let f_hat = PolyVec::new(vec![Polynomial::var(Block::Xhat.var(1)), Polynomial::zero()]);
        let g = PolyMat::constant(&[vec![0.0], vec![1.0]]).unwrap();
        let dynamics = build_error_dynamics(&f, &g, &f_hat, &g, &PolyVec::vars(Block::Xhat, 2)).unwrap();
        let rhs = ParametricRhs::new(vec![&t * &t, &t * &t], &th).unwrap();
        let urhs = ParametricRhs::new(vec![Polynomial::constant(1.0)], &th).unwrap();
        SynthesisProblem {
            dynamics,
            n_hat: 2,
            m_hat: 1,
            n_delta: 0,
            xhat_set: ParametricSet::new(vec![sq(Block::Xhat, 0), sq(Block::Xhat, 1)], rhs).unwrap(),
            uhat_set: ParametricSet::new(vec![sq(Block::Uhat, 0)], urhs).unwrap(),
            delta_set: SemialgebraicSet::default(),
            theta: th,
            omega: SemialgebraicSet::default().le(&sq(Block::E, 0) + &sq(Block::E, 1), Polynomial::constant(0.01)),
            input: Polytope::symmetric_box(&[2.0]),
        }
    }

    #[test]
    fn v_step_sublevel_set_is_nested() {
        let prob = double_integrator();
        let config = SynthesisConfig::default();
        let ipm = InteriorPoint::default();
        let v0 = initialize_v(&prob, &config, &ipm).unwrap();
        let sc = Scaled::new(&prob, &Scaled::quadratic_part(&v0, 2), 1.0).unwrap();
        let deg = Degrees { v: 2, kappa: 3 };
        let search = GammaSearch {
            rel_tol: 2e-3,
            max_bisections: 12,
            max_expansions: 12,
            backoff: 1e-6,
        };
        let prev = sc.to_scaled(&v0);
        let step = steps::gamma_step(&sc, deg, &prev, 1, None, &search, &ipm).unwrap();
        let next = steps::v_step(&sc, deg, &prev, &step, &ipm).unwrap().expect("V-step feasible");
        assert_ne!(next.v, prev);

        let (v_new, v_old) = (sc.from_scaled(&next.v), v0);
        let s = Scaled::quadratic_part(&v_new, 2);
        let half: Vec<f64> = {
            let si = s.clone().try_inverse().unwrap();
            (0..2).map(|i| 1.5 * (si[(i, i)] * step.gamma.abs()).sqrt() + 1e-3).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut inside = 0;
        while inside < 100_000 {
            let e: Vec<f64> = half.iter().map(|&h| rng.gen_range(-h..h)).collect();
            let theta = [rng.gen_range(0.0..1.0)];
            let pt = Point::new().with(Block::E, &e).with(Block::Theta, &theta);
            if v_new.eval_unchecked(&pt) > step.gamma {
                continue;
            }
            inside += 1;
            let old = v_old.eval_unchecked(&pt);
            assert!(old <= step.gamma + 1e-6, "V_prev {old} above {} at {e:?}", step.gamma);
        }
    }
}
