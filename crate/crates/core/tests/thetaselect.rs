use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safesynth::certsynth::Certificate;
use safesynth::models::{double_pendulum, Benchmark, SELECTED_THETA};
use safesynth::polynomial::{Block, Monomial, Point, PolyVec, Polynomial};
use safesynth::semialg::{ParametricRhs, ParametricSet, SemialgebraicSet, ThetaBox};
use safesynth::sosprog::InteriorPoint;
use safesynth::thetaselect::{s_step, select_theta, ContainmentProblem, ThetaConfig};

const PLAN_RADIUS: f64 = 0.8;
const GAMMA: f64 = 0.04;
const V_THETA: f64 = 0.05;

fn sq(b: Block, i: usize) -> Polynomial {
    Polynomial::monomial(Monomial::var_pow(b.var(i), 2), 1.0)
}

fn theta() -> Polynomial {
    Polynomial::var(Block::Theta.var(0))
}

/// Unit disk `X`, planner disk of radius `0.8 θ`, error disk
/// `|e|² ≤ γ + 0.05 θ²`.
fn disk_toy() -> ContainmentProblem {
    let th = ThetaBox::new(vec![1.0]).unwrap();
    let v = &(&sq(Block::E, 0) + &sq(Block::E, 1)) - &((&theta() * &theta()) * V_THETA);
    let cert = Certificate {
        v,
        kappa: PolyVec::new(Vec::new()),
        gamma: GAMMA,
        theta: th.clone(),
        v_degree: 2,
        kappa_degree: 0,
        problem_hash: String::new(),
        history: vec![GAMMA],
    };
    let state_set = SemialgebraicSet::default().le(&sq(Block::X, 0) + &sq(Block::X, 1), Polynomial::constant(1.0));
    let rhs = ParametricRhs::new(vec![(&theta() * &theta()) * (PLAN_RADIUS * PLAN_RADIUS)], &th).unwrap();
    let xhat_set = ParametricSet::new(vec![&sq(Block::Xhat, 0) + &sq(Block::Xhat, 1)], rhs).unwrap();
    let pi = PolyVec::vars(Block::Xhat, 2);
    ContainmentProblem::new(&cert, state_set, xhat_set, pi, 2).unwrap()
}

/// Largest θ with `0.8 θ + sqrt(γ + 0.05 θ²) ≤ 1`, by bisection.
fn disk_budget() -> f64 {
    let reach = |t: f64| PLAN_RADIUS * t + (GAMMA + V_THETA * t * t).sqrt();
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if reach(mid) <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn disk_toy_matches_closed_form() {
    let prob = disk_toy();
    let sel = select_theta(&prob, &ThetaConfig::default(), "", &InteriorPoint::default()).unwrap();
    let expect = disk_budget();
    assert!((sel.theta_bar[0] - expect).abs() <= 1e-3, "{:?} vs {expect}", sel.theta_bar);
}

#[test]
fn sum_never_decreases() {
    let prob = disk_toy();
    let sel = select_theta(&prob, &ThetaConfig::default(), "", &InteriorPoint::default()).unwrap();
    assert!(sel.history.len() >= 2);
    for w in sel.history.windows(2) {
        assert!(w[1].iter().sum::<f64>() >= w[0].iter().sum::<f64>());
    }
}

#[test]
fn zero_iterations_return_start() {
    let prob = disk_toy();
    let config = ThetaConfig {
        iterations: 0,
        ..ThetaConfig::default()
    };
    let sel = select_theta(&prob, &config, "", &InteriorPoint::default()).unwrap();
    assert_eq!(sel.theta_bar, vec![0.5]);
}

#[test]
fn infeasible_start_is_halved() {
    let prob = disk_toy();
    let config = ThetaConfig {
        iterations: 0,
        initial: Some(vec![1.0]),
        ..ThetaConfig::default()
    };
    let sel = select_theta(&prob, &config, "", &InteriorPoint::default()).unwrap();
    assert_eq!(sel.theta_bar, vec![0.5]);
}

#[test]
fn collapsed_planner_set_is_feasible() {
    let prob = disk_toy();
    let mult = s_step(&prob, &[0.0], &ThetaConfig::default(), &InteriorPoint::default())
        .unwrap()
        .expect("error disk alone fits");
    assert_eq!(mult.per_face.len(), prob.faces());
    assert!(mult.margins.iter().all(|&m| m >= 0.0));
}

#[test]
fn beyond_budget_has_no_certificate() {
    let prob = disk_toy();
    let t = disk_budget() + 0.02;
    let res = s_step(&prob, &[t], &ThetaConfig::default(), &InteriorPoint::default()).unwrap();
    assert!(res.is_none());
}

#[test]
fn wrong_start_dimension() {
    let prob = disk_toy();
    let config = ThetaConfig {
        initial: Some(vec![0.5, 0.5]),
        ..ThetaConfig::default()
    };
    assert!(select_theta(&prob, &config, "", &InteriorPoint::default()).is_err());
}

fn pendulum_problem() -> ContainmentProblem {
    let b = double_pendulum();
    let v = (0..4).fold(Polynomial::zero(), |acc, i| acc + sq(Block::E, i) * (i as f64 + 1.0));
    let cert = Certificate {
        v: &v - &(&theta() * 0.01),
        kappa: PolyVec::new(Vec::new()),
        gamma: 0.02,
        theta: b.theta.clone(),
        v_degree: 2,
        kappa_degree: 0,
        problem_hash: String::new(),
        history: vec![0.02],
    };
    ContainmentProblem::from_benchmark(&b, &cert).unwrap()
}

#[test]
fn pendulum_faces_and_dimensions() {
    let prob = pendulum_problem();
    assert_eq!(prob.faces(), 4);
    for i in 0..4 {
        let rc = prob.reduced_constraint(i).unwrap();
        let vars = rc.variables(prob.n, prob.n_hat);
        assert_eq!(vars.len(), 4 + 2 + 2);
        assert_eq!(vars.iter().filter(|v| v.block == Block::X).count(), 4);
        for p in [&rc.face, &rc.error_row].into_iter().chain(&rc.planner_rows) {
            assert!(p.vars_used().iter().all(|v| vars.contains(v)), "{p}");
        }
    }
}

#[test]
fn both_forms_agree_under_the_error_map() {
    let prob = pendulum_problem();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..prob.faces() {
        let in_x = prob.reduced_constraint(i).unwrap();
        let in_e = prob.error_form(i).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xh: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let th: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..1.0)).collect();
            let e = vec![x[0] - xh[0], x[1] - xh[1], x[2], x[3]];
            let px = Point::new().with(Block::X, &x).with(Block::Xhat, &xh).with(Block::Theta, &th);
            let pe = Point::new().with(Block::E, &e).with(Block::Xhat, &xh).with(Block::Theta, &th);
            let fx = in_x.face.eval_unchecked(&px);
            let fe = in_e.face.eval_unchecked(&pe);
            assert!((fx - fe).abs() < 1e-12);
            let rx = in_x.error_row.eval_unchecked(&px);
            let re = in_e.error_row.eval_unchecked(&pe);
            assert!((rx - re).abs() < 1e-12);
        }
    }
}

fn bundled_problem() -> ContainmentProblem {
    let b = Benchmark::bundled().unwrap();
    ContainmentProblem::from_benchmark(&b, &Benchmark::bundled_certificate().unwrap()).unwrap()
}

#[test]
fn bundled_selection_is_reproduced() {
    let sel = select_theta(&bundled_problem(), &ThetaConfig::default(), "", &InteriorPoint::default()).unwrap();
    for (got, want) in sel.theta_bar.iter().zip(SELECTED_THETA) {
        assert!((got - want).abs() < 1e-5, "{:?}", sel.theta_bar);
    }
    // the published selection for this benchmark
    for (got, paper) in sel.theta_bar.iter().zip([0.954, 0.940]) {
        assert!((got - paper).abs() <= 0.05, "{:?}", sel.theta_bar);
    }
}

#[test]
fn containment_certificate_exists_below_selection_only() {
    let prob = bundled_problem();
    let ipm = InteriorPoint::default();
    let inside = s_step(&prob, &[0.9, 0.9], &ThetaConfig::default(), &ipm).unwrap();
    assert!(inside.is_some_and(|m| m.margins.iter().all(|&t| t >= 0.0)));
    assert!(s_step(&prob, &[0.99, 0.99], &ThetaConfig::default(), &ipm).unwrap().is_none());
}
