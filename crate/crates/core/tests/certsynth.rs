use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safesynth::certsynth::{
    build_error_dynamics, initialize_v, synthesize, InitMethod, SynthesisConfig, SynthesisProblem,
};
use safesynth::error::Error;
use safesynth::polynomial::{Block, Monomial, PolyMat, PolyVec, Polynomial};
use safesynth::semialg::{ParametricRhs, ParametricSet, Polytope, SemialgebraicSet, ThetaBox};
use safesynth::sosprog::InteriorPoint;

fn sq(b: Block, i: usize) -> Polynomial {
    Polynomial::monomial(Monomial::var_pow(b.var(i), 2), 1.0)
}

fn linear(block: Block, a: &[Vec<f64>]) -> PolyVec {
    PolyVec::new(
        a.iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(Polynomial::zero(), |acc, (j, &c)| acc + Polynomial::linear(block.var(j), c))
            })
            .collect(),
    )
}

/// Tracker and planner share the model `ẋ = A x + B u`; planner states
/// bounded by `θ`, planner inputs by 1.
fn twin_problem(a: &[Vec<f64>], b: &[f64], input_bound: f64, omega: SemialgebraicSet) -> SynthesisProblem {
    let n = a.len();
    let th = ThetaBox::new(vec![1.0]).unwrap();
    let t = Polynomial::var(Block::Theta.var(0));
    let f = linear(Block::X, a);
    let f_hat = linear(Block::Xhat, a);
    let g = PolyMat::constant(&b.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
    let pi = PolyVec::vars(Block::Xhat, n);
    let dynamics = build_error_dynamics(&f, &g, &f_hat, &g, &pi).unwrap();
    let xhat_rows: Vec<Polynomial> = (0..n).map(|i| sq(Block::Xhat, i)).collect();
    let xhat_rhs = ParametricRhs::new(vec![&t * &t; n], &th).unwrap();
    let uhat_rhs = ParametricRhs::new(vec![Polynomial::constant(1.0)], &th).unwrap();
    SynthesisProblem {
        dynamics,
        n_hat: n,
        m_hat: 1,
        n_delta: 0,
        xhat_set: ParametricSet::new(xhat_rows, xhat_rhs).unwrap(),
        uhat_set: ParametricSet::new(vec![sq(Block::Uhat, 0)], uhat_rhs).unwrap(),
        delta_set: SemialgebraicSet::default(),
        theta: th,
        omega,
        input: Polytope::symmetric_box(&[input_bound]),
    }
}

fn double_integrator() -> (Vec<Vec<f64>>, Vec<f64>) {
    (vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![0.0, 1.0])
}

fn origin_only(n: usize) -> SemialgebraicSet {
    (0..n).fold(SemialgebraicSet::default(), |s, i| s.eq(Polynomial::var(Block::E.var(i))))
}

fn error_ball(n: usize, r: f64) -> SemialgebraicSet {
    let norm = (0..n).fold(Polynomial::zero(), |acc, i| acc + sq(Block::E, i));
    SemialgebraicSet::default().le(norm, Polynomial::constant(r * r))
}

#[test]
fn collapsed_initial_set_shrinks_gamma() {
    let (a, b) = double_integrator();
    let prob = twin_problem(&a, &b, 5.0, origin_only(2));
    let config = SynthesisConfig {
        iterations: 3,
        ..SynthesisConfig::default()
    };
    let ipm = InteriorPoint::default();
    let v0 = initialize_v(&prob, &config, &ipm).unwrap();
    let cert = synthesize(&prob, &v0, &config, &ipm).unwrap();
    // the Riccati form is unscaled here, so γ = 1 is its natural level
    assert!(cert.gamma < 1e-3, "gamma {}", cert.gamma);
    for w in cert.history.windows(2) {
        assert!(w[1] <= w[0]);
    }
}

#[test]
fn no_control_authority_is_infeasible() {
    let a = vec![vec![1.0]];
    let prob = twin_problem(&a, &[1.0], 0.0, error_ball(1, 0.1));
    let config = SynthesisConfig::default();
    let ipm = InteriorPoint::default();
    let v0 = initialize_v(&prob, &config, &ipm).unwrap();
    match synthesize(&prob, &v0, &config, &ipm) {
        Err(Error::Initialization(_)) => {}
        other => panic!("expected an initialization failure, got {other:?}"),
    }
}

#[test]
fn zero_iterations_keep_initial_storage() {
    let (a, b) = double_integrator();
    let prob = twin_problem(&a, &b, 5.0, error_ball(2, 0.05));
    let config = SynthesisConfig {
        iterations: 0,
        ..SynthesisConfig::default()
    };
    let ipm = InteriorPoint::default();
    let v0 = initialize_v(&prob, &config, &ipm).unwrap();
    let cert = synthesize(&prob, &v0, &config, &ipm).unwrap();
    assert_eq!(cert.history.len(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let e: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pt = safesynth::polynomial::Point::new().with(Block::E, &e);
        let want = v0.eval_unchecked(&pt);
        let got = cert.v_at(&e, &[0.5]);
        assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
    }
}

/// `S` with `AᵀS + SA = −Q` from the vectorized equation
/// `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(S) = −vec(Q)`.
fn lyapunov_by_kronecker(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let at = a.transpose();
    let id = DMatrix::<f64>::identity(n, n);
    let k = id.kronecker(&at) + at.kronecker(&id);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let s = k.lu().solve(&rhs).unwrap();
    DMatrix::from_column_slice(n, n, s.as_slice())
}

#[test]
fn lyapunov_initialization_matches_oracle() {
    let a = vec![vec![-1.0, 2.0], vec![0.0, -3.0]];
    let prob = twin_problem(&a, &[0.0, 1.0], 5.0, error_ball(2, 0.1));
    let config = SynthesisConfig {
        init: InitMethod::Lyapunov { q: vec![1.0, 2.0] },
        ..SynthesisConfig::default()
    };
    let v0 = initialize_v(&prob, &config, &InteriorPoint::default()).unwrap();

    let am = DMatrix::from_fn(2, 2, |i, j| a[i][j]);
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
    let s = lyapunov_by_kronecker(&am, &q);
    let coef = |i: usize, j: usize| {
        let m = Monomial::var(Block::E.var(i)).mul(&Monomial::var(Block::E.var(j)));
        v0.coefficient(&m)
    };
    // V⁰ is S up to the normalization that puts Ω on its unit level set
    let c = coef(0, 0) / s[(0, 0)];
    assert!(c > 0.0);
    assert!((coef(1, 1) - c * s[(1, 1)]).abs() <= 1e-6 * c);
    assert!((coef(0, 1) - 2.0 * c * s[(0, 1)]).abs() <= 1e-6 * c);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dv = (0..2).map(|i| v0.derivative(Block::E.var(i))).collect::<Vec<_>>();
    for _ in 0..1000 {
        let e: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pt = safesynth::polynomial::Point::new().with(Block::E, &e);
        let f = am.clone() * DVector::from_column_slice(&e);
        let vdot: f64 = (0..2).map(|i| dv[i].eval_unchecked(&pt) * f[i]).sum();
        assert!(vdot < 0.0);
    }
}
