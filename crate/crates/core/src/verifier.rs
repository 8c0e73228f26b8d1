//! Sampling checks of certificates and containment claims.
//!
//! Nothing here looks at solver output other than the recovered polynomials.
//! Set-constrained points come from rejection sampling in a bounding box;
//! points on or near a boundary come from radial scaling along a random
//! direction from an interior center.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::certsynth::{Certificate, SynthesisProblem};
use crate::error::{Error, Result};
use crate::polynomial::{Block, Point, Polynomial};
use crate::semialg::SemialgebraicSet;
use crate::thetaselect::ContainmentProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub decrease: f64,
    pub input: f64,
    pub omega: f64,
    pub monotone: f64,
    pub containment: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            decrease: 1e-4,
            input: 1e-6,
            omega: 1e-9,
            monotone: 1e-9,
            containment: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPlan {
    pub samples: usize,
    pub seed: u64,
    /// Half-width of the level band `|V − γ| ≤ band` used by the decrease check.
    pub band: f64,
    /// Share of set samples placed on the boundary by radial scaling.
    pub boundary_share: f64,
    /// Half-width used for variables a set does not bound by an interval.
    pub fallback_radius: f64,
    pub tolerances: Tolerances,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            samples: 100_000,
            seed: 0,
            band: 1e-3,
            boundary_share: 0.5,
            fallback_radius: 10.0,
            tolerances: Tolerances::default(),
        }
    }
}

impl SamplingPlan {
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Outcome of one check: the largest observed violation and where.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub passed: bool,
    /// Sample attaining `worst`, by block name.
    pub witness: BTreeMap<String, Vec<f64>>,
}

impl CheckReport {
    fn new(name: &str, tolerance: f64) -> Self {
        CheckReport {
            name: name.into(),
            worst: f64::NEG_INFINITY,
            tolerance,
            samples: 0,
            passed: false,
            witness: BTreeMap::new(),
        }
    }

    fn record(&mut self, value: f64, pt: &Point, blocks: &[Block]) {
        self.samples += 1;
        if value > self.worst || self.witness.is_empty() {
            self.worst = value;
            self.witness = blocks.iter().map(|&b| (b.to_string(), pt.get(b).to_vec())).collect();
        }
    }

    fn finish(mut self) -> Self {
        self.passed = self.samples > 0 && self.worst <= self.tolerance;
        self
    }

    pub fn line(&self) -> String {
        format!(
            "{}: {} (worst {:.3e}, tolerance {:.0e}, {} samples)",
            self.name,
            if self.passed { "pass" } else { "fail" },
            self.worst,
            self.tolerance,
            self.samples
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub checks: Vec<CheckReport>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn new(seed: u64, checks: Vec<CheckReport>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        VerificationReport { seed, checks, passed }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn get(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Axis-aligned box used to draw samples of a set.
#[derive(Clone, Debug)]
struct SampleBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Origin of the rays; the center of the bounds from single rows.
    center: Vec<f64>,
}

const RAYS: usize = 256;
const BISECTIONS: usize = 60;

impl SampleBox {
    /// Bounds from single-variable rows, tightened along rays from the center
    /// for variables no row bounds by itself.
    fn of(set: &SemialgebraicSet, block: Block, dim: usize, fallback: f64) -> SampleBox {
        let (lo, hi): (Vec<f64>, Vec<f64>) = (0..dim)
            .map(|i| match set.interval_of(block.var(i)) {
                Some((a, b)) => (a.max(-fallback), b.min(fallback)),
                None => (-fallback, fallback),
            })
            .unzip();
        let free: Vec<usize> = (0..dim).filter(|&i| set.interval_of(block.var(i)).is_none()).collect();
        let center = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let outer = SampleBox { lo, hi, center };
        if free.is_empty() {
            return outer;
        }
        let sampler = SetSampler { set, block, bx: &outer };
        let center = outer.center.clone();
        if !sampler.inside(&center) {
            return outer;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut lo, mut hi) = (center.clone(), center.clone());
        for _ in 0..RAYS {
            let p = sampler.ray(&center, &mut rng);
            for i in 0..dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let mut bx = outer.clone();
        for &i in &free {
            let pad = 0.05 * (hi[i] - lo[i]);
            bx.lo[i] = (lo[i] - pad).max(outer.lo[i]);
            bx.hi[i] = (hi[i] + pad).min(outer.hi[i]);
        }
        bx
    }
}

/// Samples a set of one block: uniform by rejection from a box, or on the
/// boundary along a ray from the box center. Sets too thin for rejection
/// are sampled radially.
struct SetSampler<'a> {
    set: &'a SemialgebraicSet,
    block: Block,
    bx: &'a SampleBox,
}

const REJECTION_TRIES: usize = 200;
const MAX_REJECTIONS: usize = 100_000;

impl SetSampler<'_> {
    fn inside(&self, x: &[f64]) -> bool {
        let pt = Point::new().with(self.block, x);
        self.set.min_margin(&pt).map_or(false, |m| m >= 0.0)
    }

    fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.bx
            .lo
            .iter()
            .zip(&self.bx.hi)
            .map(|(&a, &b)| if b > a { rng.gen_range(a..=b) } else { a })
            .collect()
    }

    /// Last point of the set on a random ray from `center` inside the box.
    fn ray(&self, center: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let (lo, hi) = (&self.bx.lo, &self.bx.hi);
        let dir: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| {
                if b > a {
                    rng.sample::<f64, _>(StandardNormal) * 0.5 * (b - a)
                } else {
                    0.0
                }
            })
            .collect();
        let t_box = dir
            .iter()
            .enumerate()
            .filter(|(_, d)| d.abs() > 0.0)
            .map(|(i, &d)| {
                if d > 0.0 {
                    (hi[i] - center[i]) / d
                } else {
                    (lo[i] - center[i]) / d
                }
            })
            .fold(f64::INFINITY, f64::min);
        if !t_box.is_finite() {
            return center.to_vec();
        }
        let at = |t: f64| -> Vec<f64> { center.iter().zip(&dir).map(|(c, d)| c + t * d).collect() };
        if self.inside(&at(t_box)) {
            return at(t_box);
        }
        let (mut a, mut b) = (0.0, t_box);
        for _ in 0..BISECTIONS {
            let m = 0.5 * (a + b);
            if self.inside(&at(m)) {
                a = m;
            } else {
                b = m;
            }
        }
        at(a)
    }

    fn uniform(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let center = &self.bx.center;
        let star = self.inside(center);
        let tries = if star { REJECTION_TRIES } else { MAX_REJECTIONS };
        for _ in 0..tries {
            let x = self.draw(rng);
            if self.inside(&x) {
                return Ok(x);
            }
        }
        if !star {
            return Err(Error::InvalidSet(format!(
                "no sample of block {} found by rejection",
                self.block
            )));
        }
        let p = self.ray(center, rng);
        let s = rng.gen::<f64>().powf(1.0 / p.len().max(1) as f64);
        Ok(center.iter().zip(&p).map(|(c, q)| c + s * (q - c)).collect())
    }

    fn boundary(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let center = &self.bx.center;
        if !self.inside(center) {
            return self.uniform(rng);
        }
        Ok(self.ray(center, rng))
    }

    fn mixed(&self, boundary_share: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
        if rng.gen::<f64>() < boundary_share {
            self.boundary(rng)
        } else {
            self.uniform(rng)
        }
    }
}

/// Points of `{e : V(e, θ) ≤ level}` by radial scaling along directions that
/// are uniform on the ellipsoid of `V`'s quadratic part.
struct LevelSampler {
    v: Polynomial,
    n: usize,
    /// `L⁻ᵀ` for `S = L Lᵀ`.
    shape: DMatrix<f64>,
}

impl LevelSampler {
    fn new(v_theta: Polynomial, n: usize) -> Result<Self> {
        let s = crate::certsynth::quadratic_part(&v_theta, n);
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::InvalidSet("quadratic part of V is not positive definite".into()))?;
        let shape = chol
            .l()
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::InvalidSet("singular quadratic part of V".into()))?;
        Ok(LevelSampler { v: v_theta, n, shape })
    }

    fn value(&self, e: &[f64]) -> f64 {
        self.v.eval_unchecked(&Point::new().with(Block::E, e))
    }

    /// Point on the ray through a random direction where `V` reaches `level`,
    /// scaled by `fraction` toward the center. `None` if `V(0) > level`.
    fn ray_point(&self, level: f64, fraction: f64, rng: &mut impl Rng) -> Option<Vec<f64>> {
        if self.value(&vec![0.0; self.n]) > level {
            return None;
        }
        let z = DVector::from_fn(self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = &self.shape * z.normalize();
        let at = |r: f64| -> Vec<f64> { d.iter().map(|c| c * r).collect() };
        let mut hi = 1.0;
        let mut grown = 0;
        while self.value(&at(hi)) < level {
            hi *= 2.0;
            grown += 1;
            if grown > 60 {
                return None;
            }
        }
        let mut lo = 0.0;
        for _ in 0..BISECTIONS {
            let m = 0.5 * (lo + hi);
            if self.value(&at(m)) < level {
                lo = m;
            } else {
                hi = m;
            }
        }
        Some(at(lo * fraction))
    }

    /// Point with `V` in `[level − band, level + band]`.
    fn band(&self, level: f64, band: f64, rng: &mut impl Rng) -> Option<Vec<f64>> {
        let target = level + band * (2.0 * rng.gen::<f64>() - 1.0);
        self.ray_point(target, 1.0, rng)
    }

    /// Point of the sublevel set: on the boundary with probability
    /// `boundary_share`, else uniform in volume.
    fn sublevel(&self, level: f64, boundary_share: f64, rng: &mut impl Rng) -> Option<Vec<f64>> {
        let fraction = if rng.gen::<f64>() < boundary_share {
            1.0
        } else {
            rng.gen::<f64>().powf(1.0 / self.n as f64)
        };
        self.ray_point(level, fraction, rng)
    }
}

/// Values of the planner signals and disturbance at a given θ, drawn from
/// boxes fitted to the sets at the upper corner of Θ. The sets grow with θ,
/// so these boxes cover every smaller parameter.
struct SignalSampler<'a> {
    problem: &'a SynthesisProblem,
    share: f64,
    xhat_box: SampleBox,
    uhat_box: SampleBox,
    delta_box: SampleBox,
}

impl<'a> SignalSampler<'a> {
    fn new(problem: &'a SynthesisProblem, plan: &SamplingPlan) -> Result<Self> {
        let p = problem;
        let r = plan.fallback_radius;
        let top = &p.theta.upper;
        Ok(SignalSampler {
            problem,
            share: plan.boundary_share,
            xhat_box: SampleBox::of(&p.xhat_set.instantiate(top, &p.theta)?, Block::Xhat, p.n_hat, r),
            uhat_box: SampleBox::of(&p.uhat_set.instantiate(top, &p.theta)?, Block::Uhat, p.m_hat, r),
            delta_box: SampleBox::of(&p.delta_set, Block::Delta, p.n_delta, r),
        })
    }

    fn fill(&self, pt: &mut Point, theta: &[f64], rng: &mut impl Rng) -> Result<()> {
        let p = self.problem;
        let xs = p.xhat_set.instantiate(theta, &p.theta)?;
        let us = p.uhat_set.instantiate(theta, &p.theta)?;
        let draw =
            |set: &SemialgebraicSet, block, bx, rng: &mut _| SetSampler { set, block, bx }.mixed(self.share, rng);
        pt.set(Block::Xhat, &draw(&xs, Block::Xhat, &self.xhat_box, rng)?);
        pt.set(Block::Uhat, &draw(&us, Block::Uhat, &self.uhat_box, rng)?);
        pt.set(Block::Delta, &draw(&p.delta_set, Block::Delta, &self.delta_box, rng)?);
        Ok(())
    }
}

const SIGNAL_BLOCKS: [Block; 5] = [Block::E, Block::Xhat, Block::Uhat, Block::Delta, Block::Theta];

/// Largest `∂V/∂e · (f_e + g_e κ)` over samples with `|V − γ| ≤ band`.
pub fn verify_decrease(problem: &SynthesisProblem, cert: &Certificate, plan: &SamplingPlan) -> Result<CheckReport> {
    let n = problem.n();
    let cl = problem.dynamics.closed_loop(&cert.kappa)?;
    let lie = (0..n).fold(Polynomial::zero(), |acc, i| {
        acc + &cert.v.derivative(Block::E.var(i)) * &cl[i]
    });
    let signals = SignalSampler::new(problem, plan)?;
    let mut rng = plan.rng(1);
    let mut report = CheckReport::new("decrease", plan.tolerances.decrease);
    let mut pt = Point::new();
    let mut misses = 0;
    while report.samples < plan.samples {
        let theta = problem.theta.sample(&mut rng);
        let level = LevelSampler::new(cert.v.partial_eval(Block::Theta, &theta), n)?;
        let Some(e) = level.band(cert.gamma, plan.band, &mut rng) else {
            misses += 1;
            if misses > plan.samples {
                return Err(Error::InvalidSet("level set of V is empty".into()));
            }
            continue;
        };
        pt.set(Block::E, &e);
        pt.set(Block::Theta, &theta);
        signals.fill(&mut pt, &theta, &mut rng)?;
        report.record(lie.eval_unchecked(&pt), &pt, &SIGNAL_BLOCKS);
    }
    Ok(report.finish())
}

/// Largest `H_k κ − h_k` over samples of `{V ≤ γ}`.
pub fn verify_input_bound(problem: &SynthesisProblem, cert: &Certificate, plan: &SamplingPlan) -> Result<CheckReport> {
    let n = problem.n();
    let signals = SignalSampler::new(problem, plan)?;
    let mut rng = plan.rng(2);
    let mut report = CheckReport::new("input-bound", plan.tolerances.input);
    let mut pt = Point::new();
    while report.samples < plan.samples {
        let theta = problem.theta.sample(&mut rng);
        let level = LevelSampler::new(cert.v.partial_eval(Block::Theta, &theta), n)?;
        let Some(e) = level.sublevel(cert.gamma, plan.boundary_share, &mut rng) else {
            return Err(Error::InvalidSet("sublevel set of V is empty".into()));
        };
        pt.set(Block::E, &e);
        pt.set(Block::Theta, &theta);
        signals.fill(&mut pt, &theta, &mut rng)?;
        let u = cert.kappa.eval_unchecked(&pt);
        let worst = problem
            .input
            .margins(&u)
            .iter()
            .fold(f64::NEG_INFINITY, |a, &m| a.max(-m));
        report.record(worst, &pt, &SIGNAL_BLOCKS);
    }
    Ok(report.finish())
}

/// Largest `V(e, θ) − γ` over `e ∈ Ω`, `θ ∈ Θ`.
pub fn verify_omega(problem: &SynthesisProblem, cert: &Certificate, plan: &SamplingPlan) -> Result<CheckReport> {
    let n = problem.n();
    let omega_box = SampleBox::of(&problem.omega, Block::E, n, plan.fallback_radius);
    let omega = SetSampler {
        set: &problem.omega,
        block: Block::E,
        bx: &omega_box,
    };
    let mut rng = plan.rng(3);
    let mut report = CheckReport::new("initial-set", plan.tolerances.omega);
    let mut pt = Point::new();
    while report.samples < plan.samples {
        let theta = problem.theta.sample(&mut rng);
        let e = omega.mixed(plan.boundary_share, &mut rng)?;
        pt.set(Block::E, &e);
        pt.set(Block::Theta, &theta);
        report.record(cert.v.eval_unchecked(&pt) - cert.gamma, &pt, &[Block::E, Block::Theta]);
    }
    Ok(report.finish())
}

/// Largest `V(e, θᵇ) − V(e, θᵃ)` over `θᵃ ≤ θᵇ` in Θ and `e` around the error
/// set; nonpositive values mean the sublevel sets grow with θ.
pub fn verify_monotone(problem: &SynthesisProblem, cert: &Certificate, plan: &SamplingPlan) -> Result<CheckReport> {
    let n = problem.n();
    let upper = &problem.theta.upper;
    let level = LevelSampler::new(cert.v.partial_eval(Block::Theta, upper), n)?;
    let mut rng = plan.rng(4);
    let mut report = CheckReport::new("theta-monotone", plan.tolerances.monotone);
    let mut pa = Point::new();
    let mut pb = Point::new();
    while report.samples < plan.samples {
        let Some(e) = level.sublevel(cert.gamma, plan.boundary_share, &mut rng) else {
            return Err(Error::InvalidSet("sublevel set of V is empty".into()));
        };
        // a little outside the set as well
        let e: Vec<f64> = e.iter().map(|v| v * 1.2).collect();
        let ta = problem.theta.sample(&mut rng);
        let tb: Vec<f64> = ta
            .iter()
            .zip(upper)
            .map(|(&a, &u)| a + rng.gen::<f64>() * (u - a))
            .collect();
        pa.set(Block::E, &e);
        pa.set(Block::Theta, &ta);
        pb.set(Block::E, &e);
        pb.set(Block::Theta, &tb);
        let d = cert.v.eval_unchecked(&pb) - cert.v.eval_unchecked(&pa);
        report.record(d, &pb, &[Block::E, Block::Theta]);
    }
    Ok(report.finish())
}

/// Largest violation of `π(x̂) + e ∈ X` over `θ ∈ [0, θ̄]`, `x̂ ∈ X̂^θ`,
/// `e ∈ O^θ`. Half the parameter samples sit at the corner `θ̄`, where the
/// sets are largest.
pub fn verify_containment(prob: &ContainmentProblem, theta_bar: &[f64], plan: &SamplingPlan) -> Result<CheckReport> {
    if theta_bar.len() != prob.theta.dim() {
        return Err(Error::Dimension(format!(
            "parameter has {} entries, expected {}",
            theta_bar.len(),
            prob.theta.dim()
        )));
    }
    let mut rng = plan.rng(5);
    let mut report = CheckReport::new("containment", plan.tolerances.containment);
    let mut pt = Point::new();
    let mut xp = Point::new();
    // instantiation is checked against a box that admits θ̄ itself
    let wide = crate::semialg::ThetaBox::new(
        theta_bar
            .iter()
            .zip(&prob.theta.upper)
            .map(|(&t, &u)| t.max(u))
            .collect(),
    )?;
    let xhat_box = SampleBox::of(
        &prob.xhat_set.instantiate(theta_bar, &wide)?,
        Block::Xhat,
        prob.n_hat,
        plan.fallback_radius,
    );
    while report.samples < plan.samples {
        let theta: Vec<f64> = if rng.gen::<bool>() {
            theta_bar.to_vec()
        } else {
            theta_bar.iter().map(|&t| rng.gen::<f64>() * t).collect()
        };
        let xs = prob.xhat_set.instantiate(&theta, &wide)?;
        let xhat = SetSampler {
            set: &xs,
            block: Block::Xhat,
            bx: &xhat_box,
        }
        .mixed(plan.boundary_share, &mut rng)?;
        let level = LevelSampler::new(prob.v.partial_eval(Block::Theta, &theta), prob.n)?;
        let Some(e) = level.sublevel(prob.gamma, plan.boundary_share, &mut rng) else {
            return Err(Error::InvalidSet("error set is empty".into()));
        };
        pt.set(Block::Xhat, &xhat);
        pt.set(Block::E, &e);
        pt.set(Block::Theta, &theta);
        let x: Vec<f64> = prob.pi.eval_unchecked(&pt).iter().zip(&e).map(|(p, e)| p + e).collect();
        xp.set(Block::X, &x);
        let violation = -prob.state_set.min_margin(&xp)?;
        report.record(violation, &pt, &[Block::E, Block::Xhat, Block::Theta]);
    }
    Ok(report.finish())
}

/// All certificate checks, and the containment check when `θ̄` is given.
pub fn verify_all(
    problem: &SynthesisProblem,
    cert: &Certificate,
    containment: Option<(&ContainmentProblem, &[f64])>,
    plan: &SamplingPlan,
) -> Result<VerificationReport> {
    let mut checks = vec![
        verify_decrease(problem, cert, plan)?,
        verify_input_bound(problem, cert, plan)?,
        verify_omega(problem, cert, plan)?,
        verify_monotone(problem, cert, plan)?,
    ];
    if let Some((prob, theta_bar)) = containment {
        checks.push(verify_containment(prob, theta_bar, plan)?);
    }
    Ok(VerificationReport::new(plan.seed, checks))
}
