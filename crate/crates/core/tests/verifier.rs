use safesynth::certsynth::{build_error_dynamics, Certificate, SynthesisProblem};
use safesynth::models::{Benchmark, SELECTED_THETA};
use safesynth::polynomial::{Block, Monomial, PolyMat, PolyVec, Polynomial};
use safesynth::semialg::{ParametricRhs, ParametricSet, Polytope, SemialgebraicSet, ThetaBox};
use safesynth::thetaselect::ContainmentProblem;
use safesynth::verifier::{
    verify_all, verify_containment, verify_decrease, verify_input_bound, verify_monotone, verify_omega, SamplingPlan,
};

fn sq(b: Block, i: usize) -> Polynomial {
    Polynomial::monomial(Monomial::var_pow(b.var(i), 2), 1.0)
}

fn theta() -> Polynomial {
    Polynomial::var(Block::Theta.var(0))
}

fn plan(samples: usize) -> SamplingPlan {
    SamplingPlan {
        samples,
        seed: 5,
        ..SamplingPlan::default()
    }
}

/// `ẋ = A x + B u` tracking the same model; |x̂_i| ≤ θ, |û| ≤ 1.
fn twin(input_bound: f64) -> SynthesisProblem {
    let a = [[-1.0, 2.0], [0.0, -3.0]];
    let row = |b: Block, r: &[f64; 2]| Polynomial::linear(b.var(0), r[0]) + Polynomial::linear(b.var(1), r[1]);
    let f = PolyVec::new(a.iter().map(|r| row(Block::X, r)).collect());
    let f_hat = PolyVec::new(a.iter().map(|r| row(Block::Xhat, r)).collect());
    let g = PolyMat::constant(&[vec![0.0], vec![1.0]]).unwrap();
    let dynamics = build_error_dynamics(&f, &g, &f_hat, &g, &PolyVec::vars(Block::Xhat, 2)).unwrap();
    let th = ThetaBox::new(vec![1.0]).unwrap();
    let t = theta();
    SynthesisProblem {
        dynamics,
        n_hat: 2,
        m_hat: 1,
        n_delta: 0,
        xhat_set: ParametricSet::new(
            vec![sq(Block::Xhat, 0), sq(Block::Xhat, 1)],
            ParametricRhs::new(vec![&t * &t, &t * &t], &th).unwrap(),
        )
        .unwrap(),
        uhat_set: ParametricSet::new(
            vec![sq(Block::Uhat, 0)],
            ParametricRhs::new(vec![Polynomial::constant(1.0)], &th).unwrap(),
        )
        .unwrap(),
        delta_set: SemialgebraicSet::default(),
        theta: th,
        omega: SemialgebraicSet::default().le(sq(Block::E, 0) + sq(Block::E, 1), Polynomial::constant(0.01)),
        input: Polytope::symmetric_box(&[input_bound]),
    }
}

/// Solution of `AᵀS + SA = −I` for the twin model, computed by hand.
fn lyapunov_v() -> Polynomial {
    // S = [[1/2, 1/4], [1/4, 1/3]]
    let cross = Polynomial::monomial(Monomial::var(Block::E.var(0)).mul(&Monomial::var(Block::E.var(1))), 0.5);
    sq(Block::E, 0) * 0.5 + cross + sq(Block::E, 1) * (1.0 / 3.0)
}

fn cert(v: Polynomial, kappa: PolyVec, gamma: f64) -> Certificate {
    Certificate {
        v,
        kappa,
        gamma,
        theta: ThetaBox::new(vec![1.0]).unwrap(),
        v_degree: 2,
        kappa_degree: 1,
        problem_hash: String::new(),
        history: vec![gamma],
    }
}

fn feedforward() -> PolyVec {
    PolyVec::new(vec![Polynomial::var(Block::Uhat.var(0))])
}

#[test]
fn lyapunov_function_decreases() {
    // κ = û cancels the planner input, leaving ė = A e
    let c = cert(lyapunov_v(), feedforward(), 0.05);
    let r = verify_decrease(&twin(5.0), &c, &plan(20_000)).unwrap();
    assert!(r.passed);
    assert!(r.worst < 0.0, "{}", r.line());
}

#[test]
fn missing_feedforward_breaks_decrease() {
    let c = cert(lyapunov_v(), PolyVec::new(vec![Polynomial::zero()]), 0.05);
    let r = verify_decrease(&twin(5.0), &c, &plan(20_000)).unwrap();
    assert!(!r.passed);
    assert!(r.worst > 0.0);
    assert!(r.witness.contains_key("e"));
}

#[test]
fn zero_control_respects_any_positive_bound() {
    let c = cert(lyapunov_v(), PolyVec::new(vec![Polynomial::zero()]), 0.05);
    let r = verify_input_bound(&twin(1e-3), &c, &plan(5_000)).unwrap();
    assert!(r.passed);
    assert!((r.worst + 1e-3).abs() < 1e-12);
}

#[test]
fn shrunk_input_bound_fails() {
    let c = cert(lyapunov_v(), feedforward(), 0.05);
    assert!(verify_input_bound(&twin(1.0), &c, &plan(5_000)).unwrap().passed);
    let r = verify_input_bound(&twin(0.5), &c, &plan(5_000)).unwrap();
    assert!(!r.passed);
    // û reaches its bound on the boundary samples
    assert!((r.worst - 0.5).abs() < 1e-9, "{}", r.line());
}

#[test]
fn initial_set_inside_level() {
    let v = (sq(Block::E, 0) + sq(Block::E, 1)) * 100.0;
    let ok = cert(v.clone(), feedforward(), 1.0);
    let r = verify_omega(&twin(5.0), &ok, &plan(5_000)).unwrap();
    assert!(r.passed);
    assert!(r.worst.abs() < 1e-9, "boundary samples touch the level: {}", r.line());
    let tight = cert(v, feedforward(), 0.9);
    assert!(!verify_omega(&twin(5.0), &tight, &plan(5_000)).unwrap().passed);
}

#[test]
fn monotonicity_in_theta() {
    let shrinking = &lyapunov_v() - &(&theta() * 0.01);
    let c = cert(shrinking, feedforward(), 0.05);
    assert!(verify_monotone(&twin(5.0), &c, &plan(5_000)).unwrap().passed);
    let growing = &lyapunov_v() + &(&theta() * 0.01);
    let c = cert(growing, feedforward(), 0.05);
    assert!(!verify_monotone(&twin(5.0), &c, &plan(5_000)).unwrap().passed);
}

#[test]
fn same_seed_same_report() {
    let c = cert(lyapunov_v(), feedforward(), 0.05);
    let a = verify_all(&twin(5.0), &c, None, &plan(2_000)).unwrap();
    let b = verify_all(&twin(5.0), &c, None, &plan(2_000)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let other = SamplingPlan { seed: 6, ..plan(2_000) };
    let d = verify_all(&twin(5.0), &c, None, &other).unwrap();
    assert_ne!(a.checks[0].worst, d.checks[0].worst);
}

const PLAN_RADIUS: f64 = 0.8;
const GAMMA: f64 = 0.04;
const V_THETA: f64 = 0.05;

fn disk_toy() -> ContainmentProblem {
    let th = ThetaBox::new(vec![1.0]).unwrap();
    let v = &(sq(Block::E, 0) + sq(Block::E, 1)) - &((&theta() * &theta()) * V_THETA);
    let c = Certificate {
        theta: th.clone(),
        ..cert(v, PolyVec::new(Vec::new()), GAMMA)
    };
    let state_set = SemialgebraicSet::default().le(sq(Block::X, 0) + sq(Block::X, 1), Polynomial::constant(1.0));
    let rhs = ParametricRhs::new(vec![(&theta() * &theta()) * (PLAN_RADIUS * PLAN_RADIUS)], &th).unwrap();
    let xhat_set = ParametricSet::new(vec![sq(Block::Xhat, 0) + sq(Block::Xhat, 1)], rhs).unwrap();
    ContainmentProblem::new(&c, state_set, xhat_set, PolyVec::vars(Block::Xhat, 2), 2).unwrap()
}

/// Worst case of the disk toy: both disks aligned, reach `0.8 θ + sqrt(γ + 0.05 θ²)`.
fn disk_reach(t: f64) -> f64 {
    PLAN_RADIUS * t + (GAMMA + V_THETA * t * t).sqrt()
}

#[test]
fn collapsed_planner_set_is_contained() {
    let r = verify_containment(&disk_toy(), &[0.0], &plan(10_000)).unwrap();
    assert!(r.passed);
    assert!(r.worst <= disk_reach(0.0).powi(2) - 1.0 + 1e-9);
}

#[test]
fn disk_toy_matches_closed_form() {
    for t in [0.3, 0.8, 0.95] {
        let r = verify_containment(&disk_toy(), &[t], &plan(50_000)).unwrap();
        let exact = disk_reach(t) * disk_reach(t) - 1.0;
        assert!(r.worst <= exact + 1e-9, "{t}: {} above {exact}", r.worst);
        assert!(r.worst >= exact - 0.05, "{t}: {} far below {exact}", r.worst);
        assert_eq!(r.passed, exact <= 1e-6, "{t}");
    }
}

#[test]
fn containment_rejects_wrong_dimension() {
    assert!(verify_containment(&disk_toy(), &[0.1, 0.1], &plan(10)).is_err());
}

fn bundled() -> (SynthesisProblem, Certificate, ContainmentProblem) {
    let b = Benchmark::bundled().unwrap();
    let cert = Benchmark::bundled_certificate().unwrap();
    let prob = ContainmentProblem::from_benchmark(&b, &cert).unwrap();
    (b.synthesis_problem().unwrap(), cert, prob)
}

#[test]
fn bundled_certificate_passes() {
    let (problem, cert, prob) = bundled();
    let r = verify_all(&problem, &cert, Some((&prob, &SELECTED_THETA)), &plan(20_000)).unwrap();
    for c in &r.checks {
        assert!(c.passed, "{}", c.line());
    }
}

#[test]
fn bundled_controller_is_needed() {
    let (problem, mut cert, _) = bundled();
    cert.kappa = PolyVec::zeros(cert.kappa.len());
    let r = verify_decrease(&problem, &cert, &plan(20_000)).unwrap();
    assert!(!r.passed);
    assert!(r.worst > 0.0);
}

#[test]
fn selection_is_tight_at_a_million_samples() {
    let (_, _, prob) = bundled();
    let r = verify_containment(&prob, &SELECTED_THETA, &plan(1_000_000)).unwrap();
    assert!(r.passed, "{}", r.line());
    let beyond = SELECTED_THETA.map(|t| t + 0.05);
    assert!(!verify_containment(&prob, &beyond, &plan(100_000)).unwrap().passed);
}
