//! Helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use safesynth::planner::{DenseQp, Mpc, QpOutcome};

pub mod poly;

/// Objective of the linearized MPC problem from `x0` by condensing: states
/// are eliminated through the dynamics and a dense QP is solved in the
/// inputs alone. The inputs are parametrized as `u_k = u_ref + K (x_k − r)
/// + v_k` with the Riccati gain `K`, so the condensed matrices stay well
/// conditioned for unstable models. `None` when the QP is infeasible.
pub fn condensed_mpc_cost(mpc: &Mpc, x0: &[f64]) -> Option<f64> {
    let (a, b, c) = mpc.linear_model();
    let (q, r, p) = mpc.weights();
    let (n, m, hz) = (a.nrows(), b.ncols(), mpc.horizon());
    let nv = hz * m;
    let target = DVector::from_column_slice(&mpc.target);
    let uref = DVector::from_column_slice(&mpc.u_ref);
    let gain = -(r + b.transpose() * p * b)
        .lu()
        .solve(&(b.transpose() * p * a))
        .unwrap();

    // x_k = phi[k] + gam[k] v,  u_k = psi[k] + del[k] v
    let mut phi = vec![DVector::from_column_slice(x0)];
    let mut gam = vec![DMatrix::zeros(n, nv)];
    let mut psi = Vec::new();
    let mut del = Vec::new();
    for k in 0..hz {
        let mut sel = DMatrix::zeros(m, nv);
        for j in 0..m {
            sel[(j, k * m + j)] = 1.0;
        }
        let uk = &uref + &gain * (&phi[k] - &target);
        let dk = &gain * &gam[k] + sel;
        phi.push(a * &phi[k] + b * &uk + c);
        gam.push(a * &gam[k] + b * &dk);
        psi.push(uk);
        del.push(dk);
    }

    let mut qp = DenseQp::new(nv);
    let mut constant = 0.0;
    let mut add_term = |w: &DMatrix<f64>, off: DVector<f64>, lin: &DMatrix<f64>| {
        qp.h += lin.transpose() * w * lin * 2.0;
        qp.c += lin.transpose() * w * &off * 2.0;
        constant += off.dot(&(w * &off));
    };
    for k in 0..=hz {
        let w = if k == hz { p } else { q };
        add_term(w, &phi[k] - &target, &gam[k]);
    }
    for k in 0..hz {
        add_term(r, &psi[k] - &uref, &del[k]);
    }

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut bound = |off: &DVector<f64>, lin: &DMatrix<f64>, lo: &[f64], hi: &[f64]| {
        for i in 0..off.len() {
            let g = lin.row(i).transpose();
            if hi[i].is_finite() {
                rows.push((g.clone(), hi[i] - off[i]));
            }
            if lo[i].is_finite() {
                rows.push((-g, off[i] - lo[i]));
            }
        }
    };
    for k in 0..hz {
        bound(&psi[k], &del[k], &mpc.inputs.lo, &mpc.inputs.hi);
    }
    for k in 1..=hz {
        let set = if k == hz { &mpc.terminal } else { &mpc.states };
        bound(&phi[k], &gam[k], &set.lo, &set.hi);
    }
    qp.g_mat = DMatrix::from_fn(rows.len(), nv, |i, j| rows[i].0[j]);
    qp.g = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    match qp.solve().expect("QP solver runs") {
        QpOutcome::Solved { objective, .. } => Some(objective + constant),
        QpOutcome::Infeasible => None,
    }
}
