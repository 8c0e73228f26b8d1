//! Double-pendulum tracker with a single-pendulum planner.

use serde::{Deserialize, Serialize};

use crate::certsynth::{build_error_dynamics, Certificate, InitMethod, SynthesisConfig, SynthesisProblem};
use crate::error::Result;
use crate::polynomial::{Block, Monomial, PolyMat, PolyVec, Polynomial, Var};
use crate::semialg::{ParametricRhs, ParametricSet, Polytope, SemialgebraicSet, ThetaBox};

/// Bundled problem definition, generated from [`double_pendulum`].
pub const DOUBLE_PENDULUM_JSON: &str = include_str!("../data/double_pendulum.json");

/// Certificate synthesized for the bundled problem with [`synthesis_config`].
pub const DOUBLE_PENDULUM_CERT_JSON: &str = include_str!("../data/double_pendulum_cert.json");

/// Planner parameters selected for the bundled certificate.
pub const SELECTED_THETA: [f64; 2] = [0.970968, 0.939556];

pub const FORMAT_VERSION: u32 = 1;

/// Torque limits of the tracker, `|u_i| ≤ bound_i`.
pub const TRACKER_INPUT_BOUND: [f64; 2] = [20.0, 10.0];

/// Input weight of the Riccati design behind the initial storage function.
/// Heavier weights give a rounder error set that fits the state box better.
pub const INIT_INPUT_WEIGHT: f64 = 400.0;

/// Synthesis settings used for the double-pendulum benchmark.
pub fn synthesis_config() -> SynthesisConfig {
    SynthesisConfig {
        init: InitMethod::Riccati {
            q: Vec::new(),
            r: vec![INIT_INPUT_WEIGHT; TRACKER_INPUT_BOUND.len()],
        },
        ..SynthesisConfig::default()
    }
}

/// A planner–tracker pair with all of its sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub version: u32,
    /// Tracker drift `f(x, δ)` in block `x`.
    pub f: PolyVec,
    /// Tracker input matrix `g(x, δ)`.
    pub g: PolyMat,
    /// Planner drift `f̂(x̂)`.
    pub f_hat: PolyVec,
    pub g_hat: PolyMat,
    /// Map of planner states into tracker states.
    pub pi: PolyVec,
    /// Tracker state constraints, one row per face.
    pub state_set: SemialgebraicSet,
    pub input: Polytope,
    pub xhat_set: ParametricSet,
    pub uhat_set: ParametricSet,
    pub delta_set: SemialgebraicSet,
    pub n_delta: usize,
    pub theta: ThetaBox,
    /// Initial errors Ω.
    pub omega: SemialgebraicSet,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub target: Vec<f64>,
    pub target_hat: Vec<f64>,
}

impl Benchmark {
    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn m(&self) -> usize {
        self.g.cols()
    }

    pub fn n_hat(&self) -> usize {
        self.f_hat.len()
    }

    pub fn m_hat(&self) -> usize {
        self.g_hat.cols()
    }

    pub fn synthesis_problem(&self) -> Result<SynthesisProblem> {
        let dynamics = build_error_dynamics(&self.f, &self.g, &self.f_hat, &self.g_hat, &self.pi)?;
        Ok(SynthesisProblem {
            dynamics,
            n_hat: self.n_hat(),
            m_hat: self.m_hat(),
            n_delta: self.n_delta,
            xhat_set: self.xhat_set.clone(),
            uhat_set: self.uhat_set.clone(),
            delta_set: self.delta_set.clone(),
            theta: self.theta.clone(),
            omega: self.omega.clone(),
            input: self.input.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Benchmark> {
        Ok(serde_json::from_str(s)?)
    }

    /// Bundled double-pendulum definition.
    pub fn bundled() -> Result<Benchmark> {
        Benchmark::from_json(DOUBLE_PENDULUM_JSON)
    }

    /// Certificate shipped with the bundled definition.
    pub fn bundled_certificate() -> Result<Certificate> {
        Certificate::from_json(DOUBLE_PENDULUM_CERT_JSON)
    }

    /// Planner state `x̂` mapped into tracker coordinates.
    pub fn embed(&self, xhat: &[f64]) -> Vec<f64> {
        let pt = crate::polynomial::Point::new().with(Block::Xhat, xhat);
        self.pi.eval_unchecked(&pt)
    }
}

fn term(c: f64, f: &[(Var, u16)]) -> (Monomial, f64) {
    (Monomial::from_factors(f.iter().copied()), c)
}

/// The double-pendulum benchmark, coefficients as published for the
/// polynomial fit of the pendulum dynamics.
pub fn double_pendulum() -> Benchmark {
    let x = |i: usize| Block::X.var(i - 1);
    let xh = |i: usize| Block::Xhat.var(i - 1);
    let (x1, x2, x3, x4) = (x(1), x(2), x(3), x(4));
    let f2 = Polynomial::from_terms([
        term(-3.447, &[(x1, 3)]),
        term(2.350, &[(x1, 2), (x3, 1)]),
        term(1.303, &[(x1, 1), (x3, 2)]),
        term(3.939, &[(x3, 3)]),
        term(21.520, &[(x1, 1)]),
        term(-5.000, &[(x3, 1)]),
    ]);
    let f4 = Polynomial::from_terms([
        term(4.023, &[(x1, 3)]),
        term(-36.551, &[(x1, 2), (x3, 1)]),
        term(-4.131, &[(x2, 2), (x3, 1)]),
        term(-27.060, &[(x3, 3)]),
        term(-25.115, &[(x1, 1)]),
        term(77.700, &[(x3, 1)]),
    ]);
    let f = PolyVec::new(vec![Polynomial::var(x2), f2, Polynomial::var(x4), f4]);
    let g = PolyMat::constant(&[
        vec![0.0, 0.0],
        vec![8.0, -31.2],
        vec![0.0, 0.0],
        vec![-31.2, 391.2],
    ])
    .expect("rectangular");
    let f_hat = PolyVec::new(vec![
        Polynomial::var(xh(2)),
        Polynomial::from_terms([term(-5.131, &[(xh(1), 3)]), term(32.1, &[(xh(1), 1)])]),
    ]);
    let g_hat = PolyMat::constant(&[vec![0.0], vec![9.1]]).expect("rectangular");
    let pi = PolyVec::new(vec![
        Polynomial::var(xh(1)),
        Polynomial::var(xh(2)),
        Polynomial::zero(),
        Polynomial::zero(),
    ]);

    let lin = |v: Var, c: f64| Polynomial::linear(v, c);
    let state_set = SemialgebraicSet::default()
        .le(lin(x1, 1.0), Polynomial::constant(0.6))
        .le(lin(x1, -1.0), Polynomial::constant(0.6))
        .le(lin(x2, 1.0), Polynomial::constant(1.3))
        .le(lin(x2, -1.0), Polynomial::constant(1.3));

    let theta = ThetaBox::new(vec![1.0, 1.0]).expect("valid box");
    let th = |i: usize| Polynomial::var(Block::Theta.var(i - 1));
    let sq = |v: Var| Polynomial::monomial(Monomial::var_pow(v, 2), 1.0);
    let xhat_set = ParametricSet::new(
        vec![sq(xh(1)), sq(xh(2))],
        ParametricRhs::new(
            vec![(&th(1) * &th(1)) * 0.36, (&th(2) * &th(2)) * 1.69],
            &theta,
        )
        .expect("growing rhs"),
    )
    .expect("matching rows");
    let uhat_set = ParametricSet::new(
        vec![sq(Block::Uhat.var(0))],
        ParametricRhs::new(vec![Polynomial::constant(25.0)], &theta).expect("constant rhs"),
    )
    .expect("matching rows");

    let e = |i: usize| Polynomial::var(Block::E.var(i - 1));
    let omega = SemialgebraicSet::default()
        .eq(e(1))
        .eq(e(2))
        .eq(e(3))
        .le(sq(Block::E.var(3)), Polynomial::constant(0.03 * 0.03));

    Benchmark {
        name: "double-pendulum".into(),
        version: FORMAT_VERSION,
        f,
        g,
        f_hat,
        g_hat,
        pi,
        state_set,
        input: Polytope::symmetric_box(&TRACKER_INPUT_BOUND),
        xhat_set,
        uhat_set,
        delta_set: SemialgebraicSet::default(),
        n_delta: 0,
        theta,
        omega,
        x0: vec![-0.57, 0.52, 0.0, 0.02],
        xhat0: vec![-0.57, 0.52],
        target: vec![0.3, 0.0, 0.0, 0.0],
        target_hat: vec![0.3, 0.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::Point;

    #[test]
    fn f2_hand_value() {
        let b = double_pendulum();
        let v = b.f[1]
            .eval(&Point::new().with(Block::X, &[0.1, 0.0, 0.1, 0.0]))
            .unwrap();
        assert!((v - 1.656145).abs() < 1e-12);
    }

    #[test]
    fn planner_equilibrium_and_embedding() {
        let b = double_pendulum();
        let pt = Point::new().with(Block::Xhat, &[0.0, 0.0]);
        assert_eq!(b.f_hat.eval(&pt).unwrap(), vec![0.0, 0.0]);
        assert_eq!(b.embed(&[0.4, -0.2]), vec![0.4, -0.2, 0.0, 0.0]);
    }

    #[test]
    fn bundled_file_matches_code() {
        let b = double_pendulum();
        assert_eq!(Benchmark::bundled().unwrap(), b);
        assert_eq!(b.to_json().unwrap(), DOUBLE_PENDULUM_JSON);
    }
}
