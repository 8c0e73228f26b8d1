//! Semialgebraic constraint sets, parametric right-hand sides and parameter boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polynomial::{Block, Point, Polynomial, Universe, Var};

/// Membership tolerance for inequalities and equalities.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// One row `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: Polynomial,
    pub rhs: Polynomial,
}

impl Inequality {
    pub fn new(lhs: Polynomial, rhs: Polynomial) -> Self {
        Inequality { lhs, rhs }
    }

    /// `lhs − rhs`, nonpositive on the set.
    pub fn residual(&self) -> Polynomial {
        &self.lhs - &self.rhs
    }

    /// `rhs − lhs` at a point; nonnegative inside.
    pub fn margin(&self, pt: &Point) -> Result<f64> {
        Ok(self.rhs.eval(pt)? - self.lhs.eval(pt)?)
    }
}

/// Conjunction of polynomial inequalities `lhs ≤ rhs` and equalities `p = 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SemialgebraicSet {
    #[serde(default)]
    pub inequalities: Vec<Inequality>,
    #[serde(default)]
    pub equalities: Vec<Polynomial>,
}

impl SemialgebraicSet {
    pub fn new(inequalities: Vec<Inequality>, equalities: Vec<Polynomial>) -> Self {
        SemialgebraicSet {
            inequalities,
            equalities,
        }
    }

    pub fn le(mut self, lhs: Polynomial, rhs: Polynomial) -> Self {
        self.inequalities.push(Inequality::new(lhs, rhs));
        self
    }

    pub fn eq(mut self, p: Polynomial) -> Self {
        self.equalities.push(p);
        self
    }

    /// Box `lo_i ≤ v_i ≤ hi_i` over the first components of `block`, as two
    /// linear rows per coordinate.
    pub fn boxed(block: Block, lo: &[f64], hi: &[f64]) -> Self {
        let mut s = SemialgebraicSet::default();
        for (i, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            let v = Var::new(block, i);
            s = s
                .le(Polynomial::var(v), Polynomial::constant(h))
                .le(Polynomial::linear(v, -1.0), Polynomial::constant(-l));
        }
        s
    }

    pub fn universe(&self) -> Universe {
        let mut u = Universe::empty();
        for r in &self.inequalities {
            u = u.union(r.lhs.universe()).union(r.rhs.universe());
        }
        for p in &self.equalities {
            u = u.union(p.universe());
        }
        u
    }

    pub fn is_empty_description(&self) -> bool {
        self.inequalities.is_empty() && self.equalities.is_empty()
    }

    /// Residuals `g_i = lhs_i − rhs_i`; the set is `{g ≤ 0, h = 0}`.
    pub fn residuals(&self) -> Vec<Polynomial> {
        self.inequalities.iter().map(|r| r.residual()).collect()
    }

    pub fn contains(&self, pt: &Point) -> Result<bool> {
        for r in &self.inequalities {
            if r.margin(pt)? < -MEMBERSHIP_TOL {
                return Ok(false);
            }
        }
        for p in &self.equalities {
            if p.eval(pt)?.abs() > MEMBERSHIP_TOL {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `rhs − lhs` per inequality row.
    pub fn margins(&self, pt: &Point) -> Result<Vec<f64>> {
        self.inequalities.iter().map(|r| r.margin(pt)).collect()
    }

    /// Smallest margin over all rows, with equalities counted as `−|p|`.
    pub fn min_margin(&self, pt: &Point) -> Result<f64> {
        let mut m = f64::INFINITY;
        for r in &self.inequalities {
            m = m.min(r.margin(pt)?);
        }
        for p in &self.equalities {
            m = m.min(-p.eval(pt)?.abs());
        }
        Ok(m)
    }

    /// Fixes the variables of `block` at `values` in every row.
    pub fn partial_eval(&self, block: Block, values: &[f64]) -> SemialgebraicSet {
        SemialgebraicSet {
            inequalities: self
                .inequalities
                .iter()
                .map(|r| {
                    Inequality::new(
                        r.lhs.partial_eval(block, values),
                        r.rhs.partial_eval(block, values),
                    )
                })
                .collect(),
            equalities: self
                .equalities
                .iter()
                .map(|p| p.partial_eval(block, values))
                .collect(),
        }
    }

    /// The constraints on a single variable `v` that can be read off as an
    /// interval: rows and equalities whose residual depends on `v` alone and is
    /// linear, or quadratic with positive leading coefficient. Returns `None`
    /// when no such row exists.
    pub fn interval_of(&self, v: Var) -> Option<(f64, f64)> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut found = false;
        let only_v = |p: &Polynomial| {
            let used = p.vars_used();
            used.len() == 1 && used[0] == v && p.degree() <= 2
        };
        for g in self.residuals() {
            if !only_v(&g) {
                continue;
            }
            if let Some((a, b)) = sublevel_interval(&g, v) {
                lo = lo.max(a);
                hi = hi.min(b);
                found = true;
            }
        }
        for p in &self.equalities {
            if only_v(p) && p.degree() == 1 {
                let (c0, c1) = coeffs_1d(p, v);
                let z = -c0 / c1;
                lo = lo.max(z);
                hi = hi.min(z);
                found = true;
            }
        }
        found.then_some((lo, hi))
    }
}

fn coeffs_1d(p: &Polynomial, v: Var) -> (f64, f64) {
    use crate::polynomial::Monomial;
    (p.constant_term(), p.coefficient(&Monomial::var(v)))
}

/// `{t : g(t) ≤ 0}` for univariate `g` of degree ≤ 2 when it is an interval.
fn sublevel_interval(g: &Polynomial, v: Var) -> Option<(f64, f64)> {
    use crate::polynomial::Monomial;
    let (c0, c1) = coeffs_1d(g, v);
    let c2 = g.coefficient(&Monomial::var_pow(v, 2));
    if c2 == 0.0 {
        if c1 > 0.0 {
            return Some((f64::NEG_INFINITY, -c0 / c1));
        }
        if c1 < 0.0 {
            return Some((-c0 / c1, f64::INFINITY));
        }
        return None;
    }
    if c2 < 0.0 {
        return None;
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc < 0.0 {
        // Empty set: report a reversed interval.
        let mid = -c1 / (2.0 * c2);
        return Some((mid, mid - 1.0));
    }
    let r = disc.sqrt();
    let (a, b) = ((-c1 - r) / (2.0 * c2), (-c1 + r) / (2.0 * c2));
    Some((a.min(b), a.max(b)))
}

/// Box `[0, upper]` of admissible parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub upper: Vec<f64>,
}

impl ThetaBox {
    pub fn new(upper: Vec<f64>) -> Result<Self> {
        if upper.iter().any(|&u| !(u >= 0.0) || !u.is_finite()) {
            return Err(Error::InvalidSet(format!(
                "parameter box upper bound {upper:?} must be finite and nonnegative"
            )));
        }
        Ok(ThetaBox { upper })
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.upper.len()
            && theta
                .iter()
                .zip(&self.upper)
                .all(|(&t, &u)| t >= -MEMBERSHIP_TOL && t <= u + MEMBERSHIP_TOL)
    }

    /// Whether `self ⊆ other`.
    pub fn within(&self, other: &ThetaBox) -> bool {
        other.contains(&self.upper)
    }

    /// Rows `θ_i(θ_i − upper_i) ≤ 0`, one quadratic per coordinate.
    pub fn as_set(&self) -> SemialgebraicSet {
        let mut s = SemialgebraicSet::default();
        for (i, &u) in self.upper.iter().enumerate() {
            let t = Polynomial::var(Var::new(Block::Theta, i));
            s = s.le(&t * &t - &t * u, Polynomial::zero());
        }
        s
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.upper.iter().map(|&u| rng.gen::<f64>() * u).collect()
    }
}

/// Right-hand sides `ĥ^θ` of a parametric set, one per row.
///
/// Every partial `∂ĥ/∂θ_i` must be nonnegative on the parameter box so that the
/// instantiated sets grow with θ. This is checked on a deterministic sample at
/// construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricRhs {
    rows: Vec<Polynomial>,
}

impl ParametricRhs {
    pub fn new(rows: Vec<Polynomial>, theta: &ThetaBox) -> Result<Self> {
        for (k, r) in rows.iter().enumerate() {
            for b in r.universe().blocks() {
                if b.block != Block::Theta {
                    return Err(Error::InvalidSet(format!(
                        "right-hand side of row {k} depends on block {}",
                        b.block
                    )));
                }
            }
        }
        let rhs = ParametricRhs { rows };
        rhs.check_growth(theta, 512)?;
        Ok(rhs)
    }

    pub fn rows(&self) -> &[Polynomial] {
        &self.rows
    }

    fn check_growth(&self, theta: &ThetaBox, samples: usize) -> Result<()> {
        let n = theta.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let partials: Vec<Vec<Polynomial>> = self
            .rows
            .iter()
            .map(|r| (0..n).map(|i| r.partial(Block::Theta, i)).collect())
            .collect();
        let corners = 1usize << n.min(16);
        for s in 0..samples + corners {
            let t: Vec<f64> = if s < corners {
                (0..n)
                    .map(|i| if s >> i & 1 == 1 { theta.upper[i] } else { 0.0 })
                    .collect()
            } else {
                theta.sample(&mut rng)
            };
            let pt = Point::new().with(Block::Theta, &t);
            for (k, ps) in partials.iter().enumerate() {
                for (i, p) in ps.iter().enumerate() {
                    let d = p.eval_unchecked(&pt);
                    if d < -MEMBERSHIP_TOL {
                        return Err(Error::InvalidSet(format!(
                            "right-hand side of row {k} decreases in th{} at {t:?} (slope {d})",
                            i + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Set `{ξ : lhs_k(ξ) ≤ ĥ_k(θ)}` whose right-hand sides depend on θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricSet {
    lhs: Vec<Polynomial>,
    rhs: ParametricRhs,
}

impl ParametricSet {
    pub fn new(lhs: Vec<Polynomial>, rhs: ParametricRhs) -> Result<Self> {
        if lhs.len() != rhs.rows.len() {
            return Err(Error::Dimension(format!(
                "{} rows with {} right-hand sides",
                lhs.len(),
                rhs.rows.len()
            )));
        }
        Ok(ParametricSet { lhs, rhs })
    }

    pub fn lhs(&self) -> &[Polynomial] {
        &self.lhs
    }

    pub fn rhs(&self) -> &ParametricRhs {
        &self.rhs
    }

    pub fn len(&self) -> usize {
        self.lhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lhs.is_empty()
    }

    /// The set with θ left symbolic: rows `lhs_k(ξ) ≤ ĥ_k(θ)`.
    pub fn symbolic(&self) -> SemialgebraicSet {
        SemialgebraicSet::new(
            self.lhs
                .iter()
                .zip(&self.rhs.rows)
                .map(|(l, r)| Inequality::new(l.clone(), r.clone()))
                .collect(),
            Vec::new(),
        )
    }

    /// The concrete set at parameter value `theta ∈ Θ`.
    pub fn instantiate(&self, theta: &[f64], big_theta: &ThetaBox) -> Result<SemialgebraicSet> {
        if !big_theta.contains(theta) {
            return Err(Error::OutsideTheta(format!(
                "{theta:?} not in [0, {:?}]",
                big_theta.upper
            )));
        }
        Ok(self.symbolic().partial_eval(Block::Theta, theta))
    }
}

/// Polytope `{u : H u ≤ h}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub h_mat: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl Polytope {
    pub fn new(h_mat: Vec<Vec<f64>>, h: Vec<f64>) -> Result<Self> {
        let m = h_mat.first().map_or(0, |r| r.len());
        if h_mat.len() != h.len() || h_mat.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension("polytope H and h disagree".into()));
        }
        Ok(Polytope { h_mat, h })
    }

    /// Symmetric box `|u_i| ≤ bound_i`.
    pub fn symmetric_box(bound: &[f64]) -> Self {
        let m = bound.len();
        let mut h_mat = Vec::with_capacity(2 * m);
        let mut h = Vec::with_capacity(2 * m);
        for (i, &b) in bound.iter().enumerate() {
            for s in [1.0, -1.0] {
                let mut row = vec![0.0; m];
                row[i] = s;
                h_mat.push(row);
                h.push(b);
            }
        }
        Polytope { h_mat, h }
    }

    pub fn rows(&self) -> usize {
        self.h.len()
    }

    pub fn dim(&self) -> usize {
        self.h_mat.first().map_or(0, |r| r.len())
    }

    /// `h − H u` per row.
    pub fn margins(&self, u: &[f64]) -> Vec<f64> {
        self.h_mat
            .iter()
            .zip(&self.h)
            .map(|(row, &hk)| hk - row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        self.margins(u).iter().all(|&m| m >= -MEMBERSHIP_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xh(i: usize) -> Polynomial {
        Polynomial::var(Var::new(Block::Xhat, i))
    }
    fn th(i: usize) -> Polynomial {
        Polynomial::var(Var::new(Block::Theta, i))
    }

    fn planner_set() -> (ParametricSet, ThetaBox) {
        let big = ThetaBox::new(vec![1.0, 1.0]).unwrap();
        let rhs = ParametricRhs::new(
            vec![&th(0) * &th(0) * 0.36, &th(1) * &th(1) * 1.69],
            &big,
        )
        .unwrap();
        let set = ParametricSet::new(vec![&xh(0) * &xh(0), &xh(1) * &xh(1)], rhs).unwrap();
        (set, big)
    }

    #[test]
    fn box_membership() {
        let x = SemialgebraicSet::boxed(Block::X, &[-0.6, -1.3], &[0.6, 1.3]);
        let inside = Point::new().with(Block::X, &[0.0, 0.0, 0.0, 0.0]);
        let outside = Point::new().with(Block::X, &[0.7, 0.0, 0.0, 0.0]);
        assert!(x.contains(&inside).unwrap());
        assert!(!x.contains(&outside).unwrap());
    }

    #[test]
    fn instantiate_at_values() {
        let (set, big) = planner_set();
        let s = set.instantiate(&[0.954, 0.940], &big).unwrap();
        let (lo, hi) = s.interval_of(Var::new(Block::Xhat, 0)).unwrap();
        assert!((hi - 0.5724).abs() < 1e-12 && (lo + 0.5724).abs() < 1e-12);
        let (_, hi2) = s.interval_of(Var::new(Block::Xhat, 1)).unwrap();
        assert!((hi2 - 1.222).abs() < 1e-12);
        let z = set.instantiate(&[0.0, 0.0], &big).unwrap();
        assert_eq!(z.interval_of(Var::new(Block::Xhat, 0)), Some((0.0, 0.0)));
        assert!(set.instantiate(&[1.2, 0.0], &big).is_err());
    }

    #[test]
    fn decreasing_rhs_rejected() {
        let big = ThetaBox::new(vec![1.0]).unwrap();
        let r = ParametricRhs::new(vec![Polynomial::constant(1.0) - th(0)], &big);
        assert!(matches!(r, Err(Error::InvalidSet(_))));
    }

    #[test]
    fn equality_pins_interval() {
        let e = |i| Polynomial::var(Var::new(Block::E, i));
        let omega = SemialgebraicSet::default()
            .le(&e(3) * &e(3), Polynomial::constant(0.0009))
            .eq(e(0));
        assert_eq!(omega.interval_of(Var::new(Block::E, 0)), Some((0.0, 0.0)));
        let (lo, hi) = omega.interval_of(Var::new(Block::E, 3)).unwrap();
        assert!((lo + 0.03).abs() < 1e-12 && (hi - 0.03).abs() < 1e-12);
    }
}
