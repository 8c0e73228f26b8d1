mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safesynth::error::Error;
use safesynth::models::{double_pendulum, SELECTED_THETA};
use safesynth::planner::{discretize, Mpc, PlannerConfig, PlannerModel};
use safesynth::polynomial::{Block, PolyMat, PolyVec, Polynomial};
use safesynth::semialg::SemialgebraicSet;

const THETA_STAR: [f64; 2] = SELECTED_THETA;

fn scalar_linear(a: f64) -> (PolyVec, PolyMat) {
    (
        PolyVec::new(vec![Polynomial::linear(Block::Xhat.var(0), a)]),
        PolyMat::constant(&[vec![1.0]]).unwrap(),
    )
}

#[test]
fn rk4_matches_exponential() {
    let a = -2.0;
    let (f, g) = scalar_linear(a);
    for ts in [0.2, 0.1, 0.05] {
        let map = discretize(&f, &g, ts).unwrap();
        let x = 0.7;
        let err = (map.step(&[x], &[0.0])[0] - (a * ts).exp() * x).abs();
        // first neglected Taylor term of the exponential
        let bound = (a * ts).abs().powi(5) / 120.0 * x.abs();
        assert!(err <= 1.05 * bound, "ts {ts}: {err} vs {bound}");
        assert!(err >= 0.5 * bound, "ts {ts}: error {err} is not fifth order");
    }
}

#[test]
fn tiny_step_is_identity() {
    let b = double_pendulum();
    let map = discretize(&b.f_hat, &b.g_hat, 1e-9).unwrap();
    let x = [0.4, -0.3];
    let next = map.step(&x, &[2.0]);
    for i in 0..2 {
        assert!((next[i] - x[i]).abs() < 1e-7);
    }
}

#[test]
fn pendulum_origin_is_fixed() {
    let b = double_pendulum();
    let map = discretize(&b.f_hat, &b.g_hat, 0.05).unwrap();
    assert_eq!(map.step(&[0.0, 0.0], &[0.0]), vec![0.0, 0.0]);
}

#[test]
fn nonpositive_sampling_time_rejected() {
    let b = double_pendulum();
    assert!(discretize(&b.f_hat, &b.g_hat, 0.0).is_err());
    assert!(discretize(&b.f_hat, &b.g_hat, -0.1).is_err());
}

#[test]
fn step_jacobian_matches_differences() {
    let b = double_pendulum();
    let map = discretize(&b.f_hat, &b.g_hat, 0.05).unwrap();
    let (x, u) = ([0.31, -0.4], [1.7]);
    let (next, a, bm) = map.step_jacobian(&x, &u);
    assert_eq!(next, map.step(&x, &u));
    let h = 1e-6;
    for j in 0..2 {
        let (mut xp, mut xm) = (x, x);
        xp[j] += h;
        xm[j] -= h;
        let (p, m) = (map.step(&xp, &u), map.step(&xm, &u));
        for i in 0..2 {
            assert!((a[(i, j)] - (p[i] - m[i]) / (2.0 * h)).abs() < 1e-7);
        }
    }
    let (p, m) = (map.step(&x, &[u[0] + h]), map.step(&x, &[u[0] - h]));
    for i in 0..2 {
        assert!((bm[(i, 0)] - (p[i] - m[i]) / (2.0 * h)).abs() < 1e-7);
    }
}

fn pendulum_mpc(model: PlannerModel) -> Mpc {
    let config = PlannerConfig {
        model,
        ..PlannerConfig::default()
    };
    Mpc::for_benchmark(&double_pendulum(), &THETA_STAR, config).unwrap()
}

#[test]
fn at_target_without_constraints_stays_put() {
    let (f, g) = (
        PolyVec::new(vec![
            Polynomial::var(Block::Xhat.var(1)),
            Polynomial::linear(Block::Xhat.var(0), 2.0),
        ]),
        PolyMat::constant(&[vec![0.0], vec![1.0]]).unwrap(),
    );
    let config = PlannerConfig {
        terminal_half_width: vec![1e3, 1e3],
        ..PlannerConfig::default()
    };
    let free = SemialgebraicSet::default();
    for model in [PlannerModel::Linear, PlannerModel::Nonlinear] {
        let mut mpc = Mpc::new(&f, &g, &free, &free, PlannerConfig { model, ..config.clone() }, &[0.0, 0.0]).unwrap();
        let sol = mpc.solve(&[0.0, 0.0]).unwrap();
        assert!(sol.input[0].abs() < 1e-8, "{model:?}: {:?}", sol.input);
        assert!(sol.states.iter().flatten().all(|v| v.abs() < 1e-8));
        assert!(sol.cost.abs() < 1e-12);
    }
}

#[test]
fn pendulum_target_holds_with_equilibrium_input() {
    let mut mpc = pendulum_mpc(PlannerModel::Linear);
    // 9.1 û = 5.131·0.3³ − 32.1·0.3
    let expect = (5.131 * 0.027 - 32.1 * 0.3) / 9.1;
    assert!((mpc.u_ref[0] - expect).abs() < 1e-12);
    let sol = mpc.solve(&[0.3, 0.0]).unwrap();
    assert!((sol.input[0] - expect).abs() < 1e-7);
}

#[test]
fn linear_path_matches_condensed_oracle() {
    let mut mpc = pendulum_mpc(PlannerModel::Linear);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut solved = 0;
    for _ in 0..50 {
        let x0: Vec<f64> = (0..2)
            .map(|i| rng.gen_range(mpc.states.lo[i]..=mpc.states.hi[i]) * 0.9)
            .collect();
        let oracle = common::condensed_mpc_cost(&mpc, &x0);
        match (mpc.solve(&x0), oracle) {
            (Ok(sol), Some(j)) => {
                assert!((sol.cost - j).abs() <= 1e-6 * j.abs().max(1.0), "{x0:?}: {} vs {j}", sol.cost);
                solved += 1;
            }
            (Err(Error::PlannerInfeasible { .. }), None) => {}
            (got, want) => panic!("{x0:?}: planner {got:?}, oracle {want:?}"),
        }
    }
    assert!(solved >= 25, "only {solved} feasible draws");
}

#[test]
fn unreachable_terminal_box_reports_last_stage() {
    let config = PlannerConfig {
        horizon: 2,
        ..PlannerConfig::default()
    };
    let mut mpc = Mpc::for_benchmark(&double_pendulum(), &THETA_STAR, config).unwrap();
    match mpc.solve(&[-0.57, 0.52]) {
        Err(Error::PlannerInfeasible { stage, .. }) => assert_eq!(stage, 2),
        other => panic!("expected infeasibility, got {other:?}"),
    }
}

#[test]
fn escaping_state_reports_first_stage() {
    for model in [PlannerModel::Linear, PlannerModel::Nonlinear] {
        let mut mpc = pendulum_mpc(model);
        match mpc.solve(&[0.58, 1.2]) {
            Err(Error::PlannerInfeasible { stage, .. }) => assert_eq!(stage, 1, "{model:?}"),
            other => panic!("{model:?}: expected infeasibility, got {other:?}"),
        }
    }
}

#[test]
fn wrong_state_dimension() {
    let mut mpc = pendulum_mpc(PlannerModel::Linear);
    assert!(matches!(mpc.solve(&[0.0]), Err(Error::Dimension(_))));
}

#[test]
fn config_must_be_positive_definite() {
    let config = PlannerConfig {
        q: vec![vec![1.0, 0.0], vec![0.0, -1.0]],
        ..PlannerConfig::default()
    };
    assert!(Mpc::for_benchmark(&double_pendulum(), &THETA_STAR, config).is_err());
}

#[test]
fn nonlinear_prediction_follows_the_model() {
    let mut mpc = pendulum_mpc(PlannerModel::Nonlinear);
    let x0 = [-0.2, 0.3];
    let sol = mpc.solve(&x0).unwrap();
    let rolled = mpc.rollout(&x0, &sol.inputs);
    for (a, b) in rolled.iter().zip(&sol.states) {
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
    assert_eq!(mpc.first_violation(&sol.inputs, &sol.states), None);
    // the linear path's plan is a feasible start, so SQP cannot do worse
    // on the true model than that plan
    let mut lin = pendulum_mpc(PlannerModel::Linear);
    let plan = lin.solve(&x0).unwrap();
    let states = mpc.rollout(&x0, &plan.inputs);
    if mpc.first_violation(&plan.inputs, &states).is_none() {
        assert!(sol.cost <= mpc.cost(&plan.inputs, &states) + 1e-9);
    }
}

#[test]
fn benchmark_run_respects_planner_set() {
    for model in [PlannerModel::Linear, PlannerModel::Nonlinear] {
        let mut mpc = pendulum_mpc(model);
        let mut x = vec![-0.57, 0.52];
        let mut costs = Vec::new();
        for _ in 0..100 {
            let sol = mpc.solve(&x).unwrap();
            costs.push(sol.cost);
            x = mpc.model.step(&x, &sol.input);
            assert!(mpc.states.violation(&x) <= 1e-6, "{model:?}: {x:?}");
        }
        assert!((x[0] - 0.3).abs() < 1e-3 && x[1].abs() < 1e-3, "{model:?}: {x:?}");
        // after the transient the closed-loop cost does not grow
        for w in costs[20..].windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{model:?}: {w:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn predictions_satisfy_constraints(x1 in -0.5f64..0.5, x2 in -1.0f64..1.0) {
        let mut mpc = pendulum_mpc(PlannerModel::Linear);
        if let Ok(sol) = mpc.solve(&[x1, x2]) {
            for (k, x) in sol.states.iter().enumerate().skip(1) {
                let b = if k == mpc.horizon() { &mpc.terminal } else { &mpc.states };
                prop_assert!(b.violation(x) <= 1e-6);
            }
            for u in &sol.inputs {
                prop_assert!(mpc.inputs.violation(u) <= 1e-6);
            }
        }
    }
}

