//! Closed-loop runs of planner and tracker.
//!
//! The planner is re-solved every `T_s` and its first input held; tracker and
//! planner states are integrated together by RK4 on a finer grid, with the
//! tracking controller evaluated inside every stage.

use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certsynth::Certificate;
use crate::error::{Error, Result};
use crate::models::Benchmark;
use crate::planner::{Mpc, PlannerConfig};
use crate::polynomial::{Block, Point};
use crate::semialg::SemialgebraicSet;

/// Disturbance as a function of time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Disturbance {
    #[default]
    Zero,
    Constant {
        value: Vec<f64>,
    },
    Sinusoid {
        amplitude: Vec<f64>,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Disturbance {
    pub fn at(&self, t: f64, dim: usize) -> Vec<f64> {
        match self {
            Disturbance::Zero => vec![0.0; dim],
            Disturbance::Constant { value } => value.clone(),
            Disturbance::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => {
                let s = (2.0 * std::f64::consts::PI * frequency * t + phase).sin();
                amplitude.iter().map(|a| a * s).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub duration: f64,
    /// Integration steps per planner period.
    pub substeps: usize,
    pub disturbance: Disturbance,
    pub planner: PlannerConfig,
    /// Multiplies the tracking controller; 0 switches it off.
    pub kappa_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 10.0,
            substeps: 20,
            disturbance: Disturbance::Zero,
            planner: PlannerConfig::default(),
            kappa_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SimStatus {
    Complete,
    /// The planner found no solution at `time`; the trace stops there.
    PlannerInfeasible {
        time: f64,
        stage: usize,
        reason: String,
    },
}

/// Margins `rhs − lhs` of every constraint row at one instant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub planner_state: Vec<f64>,
    pub planner_input: Vec<f64>,
}

impl Margins {
    pub fn min_state(&self) -> f64 {
        min(&self.state)
    }
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub theta: Vec<f64>,
    pub gamma: f64,
    pub time: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub uhat: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub margins: Vec<Margins>,
    /// `V(e(t), θ)`.
    pub v: Vec<f64>,
    /// Integration steps per planner period actually used.
    pub substeps: usize,
    pub status: SimStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    /// `max_t V(e(t), θ) − γ`.
    pub max_excess: f64,
    pub at_time: f64,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub theta: Vec<f64>,
    pub status: SimStatus,
    pub samples: usize,
    pub substeps: usize,
    pub final_time: f64,
    pub final_x: Vec<f64>,
    pub final_xhat: Vec<f64>,
    pub min_state_margin: f64,
    pub min_input_margin: f64,
    pub min_planner_state_margin: f64,
    pub min_planner_input_margin: f64,
    pub containment: ContainmentReport,
}

struct Plant<'a> {
    bench: &'a Benchmark,
    cert: &'a Certificate,
    theta: &'a [f64],
    kappa_scale: f64,
}

impl Plant<'_> {
    fn error(&self, x: &[f64], xhat: &[f64]) -> Vec<f64> {
        let p = self.bench.embed(xhat);
        x.iter().zip(&p).map(|(a, b)| a - b).collect()
    }

    fn control(&self, x: &[f64], xhat: &[f64], uhat: &[f64], delta: &[f64]) -> Vec<f64> {
        let pt = Point::new()
            .with(Block::E, &self.error(x, xhat))
            .with(Block::Xhat, xhat)
            .with(Block::Uhat, uhat)
            .with(Block::Delta, delta)
            .with(Block::Theta, self.theta);
        self.cert
            .kappa_at(&pt)
            .into_iter()
            .map(|u| u * self.kappa_scale)
            .collect()
    }

    fn tracker_rate(&self, x: &[f64], u: &[f64], delta: &[f64]) -> Vec<f64> {
        let pt = Point::new().with(Block::X, x).with(Block::Delta, delta);
        let mut v = self.bench.f.eval_unchecked(&pt);
        for (i, row) in self.bench.g.eval_unchecked(&pt).iter().enumerate() {
            v[i] += row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
        v
    }

    fn planner_rate(&self, xhat: &[f64], uhat: &[f64]) -> Vec<f64> {
        let pt = Point::new().with(Block::Xhat, xhat).with(Block::Uhat, uhat);
        let mut v = self.bench.f_hat.eval_unchecked(&pt);
        for (i, row) in self.bench.g_hat.eval_unchecked(&pt).iter().enumerate() {
            v[i] += row.iter().zip(uhat).map(|(a, b)| a * b).sum::<f64>();
        }
        v
    }

    /// Joint rate of `(x, x̂)` stacked.
    fn rate(&self, z: &[f64], uhat: &[f64], delta: &[f64]) -> Vec<f64> {
        let n = self.bench.n();
        let (x, xhat) = z.split_at(n);
        let u = self.control(x, xhat, uhat, delta);
        let mut r = self.tracker_rate(x, &u, delta);
        r.extend(self.planner_rate(xhat, uhat));
        r
    }

    fn rk4(&self, z: &[f64], uhat: &[f64], t: f64, h: f64, dist: &Disturbance) -> Vec<f64> {
        let nd = self.bench.n_delta;
        let shift = |k: &[f64], s: f64| -> Vec<f64> { z.iter().zip(k).map(|(a, b)| a + s * b).collect() };
        let k1 = self.rate(z, uhat, &dist.at(t, nd));
        let mid = dist.at(t + 0.5 * h, nd);
        let k2 = self.rate(&shift(&k1, 0.5 * h), uhat, &mid);
        let k3 = self.rate(&shift(&k2, 0.5 * h), uhat, &mid);
        let k4 = self.rate(&shift(&k3, h), uhat, &dist.at(t + h, nd));
        (0..z.len())
            .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }
}

/// `h·|λ|` kept below this on the fastest closed-loop mode; RK4 is stable up
/// to about 2.78 on the negative real axis.
const RK4_REACH: f64 = 2.0;

impl Plant<'_> {
    /// Largest eigenvalue modulus of the joint rate's Jacobian at `z`, by
    /// central differences.
    fn spectral_radius(&self, z: &[f64], uhat: &[f64], delta: &[f64]) -> f64 {
        let dim = z.len();
        let h = 1e-7;
        let mut jac = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
            zp[j] += h;
            zm[j] -= h;
            let (fp, fm) = (self.rate(&zp, uhat, delta), self.rate(&zm, uhat, delta));
            for i in 0..dim {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

fn set_margins(set: &SemialgebraicSet, block: Block, v: &[f64]) -> Vec<f64> {
    set.margins(&Point::new().with(block, v)).unwrap_or_default()
}

/// Runs the closed loop of `bench` with the controller of `cert` and the
/// planner sets at `theta`. The initial error must lie in Ω and the planner
/// must be feasible at time 0; a later planner failure truncates the trace.
pub fn simulate(bench: &Benchmark, cert: &Certificate, theta: &[f64], config: &SimConfig) -> Result<SimTrace> {
    if config.substeps == 0 || !(config.duration >= 0.0) {
        return Err(Error::Config(
            "need at least one substep and a nonnegative duration".into(),
        ));
    }
    let mut mpc = Mpc::for_benchmark(bench, theta, config.planner.clone())?;
    let plant = Plant {
        bench,
        cert,
        theta,
        kappa_scale: config.kappa_scale,
    };
    let n = bench.n();
    let e0 = plant.error(&bench.x0, &bench.xhat0);
    if bench.omega.min_margin(&Point::new().with(Block::E, &e0))? < -1e-9 {
        return Err(Error::Config(format!(
            "initial error {e0:?} lies outside the initial set"
        )));
    }
    let xhat_set = bench.xhat_set.symbolic().partial_eval(Block::Theta, theta);
    let uhat_set = bench.uhat_set.symbolic().partial_eval(Block::Theta, theta);
    let ts = config.planner.ts;
    let z0: Vec<f64> = bench.x0.iter().chain(&bench.xhat0).copied().collect();
    let radius = plant.spectral_radius(&z0, &mpc.u_ref, &config.disturbance.at(0.0, bench.n_delta));
    let stable = (ts * radius / RK4_REACH).ceil() as usize;
    let substeps = if stable > config.substeps {
        warn!(
            "closed loop has a mode at {radius:.0}/s; integrating with {stable} substeps per planner period instead of {}",
            config.substeps
        );
        stable
    } else {
        config.substeps
    };
    let h = ts / substeps as f64;
    let periods = (config.duration / ts - 1e-9).ceil().max(0.0) as usize;

    let mut trace = SimTrace {
        theta: theta.to_vec(),
        gamma: cert.gamma,
        time: Vec::new(),
        x: Vec::new(),
        xhat: Vec::new(),
        e: Vec::new(),
        u: Vec::new(),
        uhat: Vec::new(),
        delta: Vec::new(),
        margins: Vec::new(),
        v: Vec::new(),
        substeps,
        status: SimStatus::Complete,
    };
    let mut status = SimStatus::Complete;
    let mut record = |t: f64, z: &[f64], uhat: &[f64]| {
        let (x, xhat) = z.split_at(n);
        let delta = config.disturbance.at(t, bench.n_delta);
        let e = plant.error(x, xhat);
        let u = plant.control(x, xhat, uhat, &delta);
        trace.margins.push(Margins {
            state: set_margins(&bench.state_set, Block::X, x),
            input: bench.input.margins(&u),
            planner_state: set_margins(&xhat_set, Block::Xhat, xhat),
            planner_input: set_margins(&uhat_set, Block::Uhat, uhat),
        });
        trace.v.push(cert.v_at(&e, theta));
        trace.time.push(t);
        trace.x.push(x.to_vec());
        trace.xhat.push(xhat.to_vec());
        trace.e.push(e);
        trace.u.push(u);
        trace.uhat.push(uhat.to_vec());
        trace.delta.push(delta);
    };

    let mut z = z0;
    let mut t = 0.0;
    let mut recorded = false;
    for period in 0..periods {
        let uhat = match mpc.solve(&z[n..]) {
            Ok(sol) => sol.input,
            Err(Error::PlannerInfeasible { stage, reason }) if period > 0 => {
                warn!("planner infeasible at t = {t:.3}: {reason}");
                status = SimStatus::PlannerInfeasible { time: t, stage, reason };
                break;
            }
            Err(e) => return Err(e),
        };
        if period == 0 {
            record(t, &z, &uhat);
            recorded = true;
        }
        for s in 0..substeps {
            z = plant.rk4(&z, &uhat, t, h, &config.disturbance);
            t = (period * substeps + s + 1) as f64 * h;
            record(t, &z, &uhat);
        }
    }
    if !recorded {
        // zero duration: only the initial instant, with the first plan
        let sol = mpc.solve(&z[n..])?;
        record(0.0, &z, &sol.input);
    }
    trace.status = status;
    Ok(trace)
}

/// Largest excess of `V(e(t), θ)` over `γ` along the trace.
pub fn check_containment(trace: &SimTrace, cert: &Certificate, theta: &[f64]) -> ContainmentReport {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (e, &t) in trace.e.iter().zip(&trace.time) {
        let excess = cert.v_at(e, theta) - cert.gamma;
        if excess > best.0 {
            best = (excess, t);
        }
    }
    ContainmentReport {
        max_excess: best.0,
        at_time: best.1,
        violated: best.0 > 0.0,
    }
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn summary(&self, cert: &Certificate) -> SimSummary {
        let fold =
            |f: &dyn Fn(&Margins) -> &Vec<f64>| self.margins.iter().map(|m| min(f(m))).fold(f64::INFINITY, f64::min);
        SimSummary {
            theta: self.theta.clone(),
            status: self.status.clone(),
            samples: self.len(),
            substeps: self.substeps,
            final_time: self.time.last().copied().unwrap_or(0.0),
            final_x: self.x.last().cloned().unwrap_or_default(),
            final_xhat: self.xhat.last().cloned().unwrap_or_default(),
            min_state_margin: fold(&|m| &m.state),
            min_input_margin: fold(&|m| &m.input),
            min_planner_state_margin: fold(&|m| &m.planner_state),
            min_planner_input_margin: fold(&|m| &m.planner_input),
            containment: check_containment(self, cert, &self.theta),
        }
    }

    /// Column names of the CSV export.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        let first = |v: &Vec<Vec<f64>>| v.first().map_or(0, |r| r.len());
        for (name, len) in [
            ("x", first(&self.x)),
            ("xhat", first(&self.xhat)),
            ("e", first(&self.e)),
            ("u", first(&self.u)),
            ("uhat", first(&self.uhat)),
            ("delta", first(&self.delta)),
        ] {
            cols.extend((1..=len).map(|i| format!("{name}{i}")));
        }
        if let Some(m) = self.margins.first() {
            for (name, v) in [
                ("m_x", &m.state),
                ("m_u", &m.input),
                ("m_xhat", &m.planner_state),
                ("m_uhat", &m.planner_input),
            ] {
                cols.extend((1..=v.len()).map(|i| format!("{name}{i}")));
            }
        }
        cols.push("V".into());
        cols
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.columns()).map_err(csv_err)?;
        for k in 0..self.len() {
            let m = &self.margins[k];
            let row = std::iter::once(self.time[k])
                .chain(self.x[k].iter().copied())
                .chain(self.xhat[k].iter().copied())
                .chain(self.e[k].iter().copied())
                .chain(self.u[k].iter().copied())
                .chain(self.uhat[k].iter().copied())
                .chain(self.delta[k].iter().copied())
                .chain(m.state.iter().copied())
                .chain(m.input.iter().copied())
                .chain(m.planner_state.iter().copied())
                .chain(m.planner_input.iter().copied())
                .chain(std::iter::once(self.v[k]));
            w.write_record(row.map(|v| format!("{v:e}"))).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}
