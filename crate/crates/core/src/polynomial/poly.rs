use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use super::monomial::Monomial;
use super::var::{Block, IndeterminateBlock, Universe, Var};
use super::vector::PolyVec;
use crate::error::{Error, Result};

/// Coefficients with magnitude below this are dropped on canonicalization.
pub const COEFF_EPS: f64 = 1e-12;

/// Numeric values for the blocks of a variable universe.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Point {
    values: [Vec<f64>; 6],
}

impl Point {
    pub fn new() -> Self {
        Point::default()
    }

    pub fn with(mut self, block: Block, values: &[f64]) -> Self {
        self.set(block, values);
        self
    }

    pub fn set(&mut self, block: Block, values: &[f64]) {
        let slot = &mut self.values[block.slot()];
        slot.clear();
        slot.extend_from_slice(values);
    }

    pub fn get(&self, block: Block) -> &[f64] {
        &self.values[block.slot()]
    }

    pub fn get_mut(&mut self, block: Block) -> &mut Vec<f64> {
        &mut self.values[block.slot()]
    }

    pub fn value(&self, v: Var) -> Option<f64> {
        self.values[v.block.slot()].get(v.index as usize).copied()
    }

    /// Whether every block of `u` is present with enough components.
    pub fn covers(&self, u: &Universe) -> bool {
        u.blocks()
            .iter()
            .all(|b| self.values[b.block.slot()].len() >= b.dim)
    }
}

/// Sparse multivariate polynomial with real coefficients.
///
/// Terms are kept sorted in graded lexicographic order with merged duplicates
/// and no coefficient smaller than [`COEFF_EPS`] in magnitude.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Polynomial {
    terms: Vec<(Monomial, f64)>,
    universe: Universe,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial::default()
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::from_terms([(Monomial::one(), c)])
    }

    pub fn var(v: Var) -> Self {
        Polynomial::from_terms([(Monomial::var(v), 1.0)])
    }

    /// `coeff * v`.
    pub fn linear(v: Var, coeff: f64) -> Self {
        Polynomial::from_terms([(Monomial::var(v), coeff)])
    }

    pub fn monomial(m: Monomial, coeff: f64) -> Self {
        Polynomial::from_terms([(m, coeff)])
    }

    /// Builds a canonical polynomial from possibly repeated terms.
    pub fn from_terms(terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut acc: HashMap<Monomial, f64> = HashMap::new();
        for (m, c) in terms {
            *acc.entry(m).or_insert(0.0) += c;
        }
        Polynomial::from_map(acc, Universe::empty())
    }

    fn from_map(acc: HashMap<Monomial, f64>, universe: Universe) -> Self {
        let mut terms: Vec<(Monomial, f64)> = acc
            .into_iter()
            .filter(|(_, c)| c.abs() >= COEFF_EPS)
            .collect();
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut p = Polynomial { terms, universe };
        p.absorb_vars();
        p
    }

    /// Makes sure the universe contains every variable that occurs.
    fn absorb_vars(&mut self) {
        let mut extra: Vec<IndeterminateBlock> = Vec::new();
        for (m, _) in &self.terms {
            for v in m.vars() {
                let need = v.index as usize + 1;
                if self.universe.dim_of(v.block).is_none_or(|d| d < need) {
                    extra.push(IndeterminateBlock::new(v.block, need));
                }
            }
        }
        for b in extra {
            self.universe.insert(b);
        }
    }

    /// Declares additional blocks as part of the universe.
    pub fn with_universe(mut self, u: &Universe) -> Self {
        self.universe = self.universe.union(u);
        self
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn terms(&self) -> &[(Monomial, f64)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(m, _)| m.degree()).max().unwrap_or(0)
    }

    /// Lowest total degree among the terms (0 for the zero polynomial).
    pub fn min_degree(&self) -> u32 {
        self.terms.iter().map(|(m, _)| m.degree()).min().unwrap_or(0)
    }

    /// Degree in the variables of one block.
    pub fn degree_in(&self, block: Block) -> u32 {
        self.terms
            .iter()
            .map(|(m, _)| {
                m.factors()
                    .iter()
                    .filter(|(v, _)| v.block == block)
                    .map(|&(_, e)| e as u32)
                    .sum::<u32>()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms
            .binary_search_by(|(t, _)| t.cmp(m))
            .map(|i| self.terms[i].1)
            .unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficient(&Monomial::one())
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.iter().fold(0.0, |a, (_, c)| a.max(c.abs()))
    }

    /// Variables that actually occur.
    pub fn vars_used(&self) -> Vec<Var> {
        let mut vs: Vec<Var> = self.terms.iter().flat_map(|(m, _)| m.vars()).collect();
        vs.sort();
        vs.dedup();
        vs
    }

    pub fn depends_on(&self, block: Block) -> bool {
        self.terms
            .iter()
            .any(|(m, _)| m.vars().any(|v| v.block == block))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut acc = HashMap::with_capacity(self.terms.len());
        for (m, c) in &self.terms {
            acc.insert(m.clone(), c * s);
        }
        Polynomial::from_map(acc, self.universe.clone())
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add_scaled(other, -1.0)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Polynomial, s: f64) -> Polynomial {
        let mut acc: HashMap<Monomial, f64> = HashMap::with_capacity(self.len() + other.len());
        for (m, c) in &self.terms {
            acc.insert(m.clone(), *c);
        }
        for (m, c) in &other.terms {
            *acc.entry(m.clone()).or_insert(0.0) += s * c;
        }
        Polynomial::from_map(acc, self.universe.union(&other.universe))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut acc: HashMap<Monomial, f64> = HashMap::with_capacity(self.len() * other.len());
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *acc.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        Polynomial::from_map(acc, self.universe.union(&other.universe))
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(1.0).with_universe(&self.universe);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                out = Polynomial::mul(&out, &base);
            }
            k >>= 1;
            if k > 0 {
                base = Polynomial::mul(&base, &base);
            }
        }
        out
    }

    /// Formal partial derivative with respect to a scalar variable.
    pub fn derivative(&self, v: Var) -> Polynomial {
        let mut acc = HashMap::new();
        for (m, c) in &self.terms {
            if let Some((e, dm)) = m.derivative(v) {
                *acc.entry(dm).or_insert(0.0) += c * e as f64;
            }
        }
        Polynomial::from_map(acc, self.universe.clone())
    }

    /// Partial derivative with respect to component `index` of `block`.
    pub fn partial(&self, block: Block, index: usize) -> Polynomial {
        self.derivative(Var::new(block, index))
    }

    /// Gradient with respect to a block of dimension `dim`.
    pub fn gradient(&self, block: Block, dim: usize) -> PolyVec {
        PolyVec::new((0..dim).map(|i| self.partial(block, i)).collect())
    }

    /// Composition: replaces each variable of `block` by the matching entry of `expr`.
    pub fn substitute(&self, block: Block, expr: &PolyVec) -> Result<Polynomial> {
        if let Some(dim) = self.universe.dim_of(block) {
            if dim != expr.len() {
                return Err(Error::Dimension(format!(
                    "substituting block {block} of dim {dim} with {} expressions",
                    expr.len()
                )));
            }
        }
        let mut powers: HashMap<(usize, u16), Polynomial> = HashMap::new();
        let mut acc: HashMap<Monomial, f64> = HashMap::new();
        for (m, c) in &self.terms {
            let (inner, rest) = m.split(|v| v.block == block);
            if inner.is_one() {
                *acc.entry(rest).or_insert(0.0) += c;
                continue;
            }
            let mut prod = Polynomial::monomial(rest, *c);
            for &(v, e) in inner.factors() {
                let i = v.index as usize;
                if i >= expr.len() {
                    return Err(Error::Dimension(format!(
                        "variable {v} has no substitute (got {} expressions)",
                        expr.len()
                    )));
                }
                let pw = powers
                    .entry((i, e))
                    .or_insert_with(|| expr[i].pow(e as u32));
                prod = Polynomial::mul(&prod, pw);
            }
            for (pm, pc) in prod.terms {
                *acc.entry(pm).or_insert(0.0) += pc;
            }
        }
        let mut universe = self.universe.without(block);
        for p in expr.iter() {
            universe = universe.union(p.universe());
        }
        Ok(Polynomial::from_map(acc, universe))
    }

    /// Linear change of scale `v -> factor(v) * v` for every variable.
    pub fn scale_vars(&self, factor: impl Fn(Var) -> f64) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| (m.clone(), c * m.eval_with(&factor)));
        Polynomial::from_terms(terms).with_universe(&self.universe)
    }

    /// Renames variables; the map must be injective on the occurring variables.
    pub fn rename(&self, f: impl Fn(Var) -> Var) -> Polynomial {
        Polynomial::from_terms(
            self.terms
                .iter()
                .map(|(m, c)| (Monomial::from_factors(m.factors().iter().map(|&(v, e)| (f(v), e))), *c)),
        )
    }

    /// Keeps the terms accepted by `keep`.
    pub fn filter_terms(&self, keep: impl Fn(&Monomial, f64) -> bool) -> Polynomial {
        Polynomial {
            terms: self
                .terms
                .iter()
                .filter(|(m, c)| keep(m, *c))
                .cloned()
                .collect(),
            universe: self.universe.clone(),
        }
    }

    pub fn eval(&self, pt: &Point) -> Result<f64> {
        if let Some(b) = self
            .universe
            .blocks()
            .iter()
            .find(|b| pt.get(b.block).len() < b.dim)
        {
            return Err(Error::MissingBlock(b.block.to_string()));
        }
        Ok(self.eval_unchecked(pt))
    }

    /// Evaluation without the universe check; missing values panic.
    pub fn eval_unchecked(&self, pt: &Point) -> f64 {
        let mut s = 0.0;
        for (m, c) in &self.terms {
            let mut t = *c;
            for &(v, e) in m.factors() {
                let x = pt.get(v.block)[v.index as usize];
                t *= match e {
                    1 => x,
                    2 => x * x,
                    _ => x.powi(e as i32),
                };
            }
            s += t;
        }
        s
    }

    /// Evaluates the polynomial in the variables of `block` only, leaving the
    /// others symbolic.
    pub fn partial_eval(&self, block: Block, values: &[f64]) -> Polynomial {
        let terms = self.terms.iter().map(|(m, c)| {
            let (inner, rest) = m.split(|v| v.block == block);
            let val = inner.eval_with(|v| values[v.index as usize]);
            (rest, c * val)
        });
        Polynomial::from_terms(terms).with_universe(&self.universe.without(block))
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (k, (m, c)) in self.terms.iter().rev().enumerate() {
            if k > 0 {
                f.write_str(if *c < 0.0 { " - " } else { " + " })?;
            } else if *c < 0.0 {
                f.write_str("-")?;
            }
            if m.is_one() {
                write!(f, "{}", c.abs())?;
            } else if (c.abs() - 1.0).abs() < 1e-15 {
                write!(f, "{m}")?;
            } else {
                write!(f, "{}*{m}", c.abs())?;
            }
        }
        Ok(())
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $inner:ident) => {
        impl $tr<&Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                Polynomial::$inner(self, rhs)
            }
        }
        impl $tr<Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                Polynomial::$inner(&self, &rhs)
            }
        }
        impl $tr<&Polynomial> for Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: &Polynomial) -> Polynomial {
                Polynomial::$inner(&self, rhs)
            }
        }
        impl $tr<Polynomial> for &Polynomial {
            type Output = Polynomial;
            fn $method(self, rhs: Polynomial) -> Polynomial {
                Polynomial::$inner(self, &rhs)
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);

impl Mul<f64> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: f64) -> Polynomial {
        self.scale(rhs)
    }
}

impl Mul<f64> for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: f64) -> Polynomial {
        self.scale(rhs)
    }
}

impl Add<f64> for Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: f64) -> Polynomial {
        Polynomial::add(&self, &Polynomial::constant(rhs))
    }
}

impl Sub<f64> for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: f64) -> Polynomial {
        Polynomial::sub(&self, &Polynomial::constant(rhs))
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Polynomial {
        Polynomial::var(Var::new(Block::X, i))
    }
    fn th(i: usize) -> Polynomial {
        Polynomial::var(Var::new(Block::Theta, i))
    }
    fn e(i: usize) -> Polynomial {
        Polynomial::var(Var::new(Block::E, i))
    }

    #[test]
    fn additive_inverse_is_zero() {
        let p = &x(0) * &x(0);
        assert!((&p + &(-&p)).is_zero());
    }

    #[test]
    fn like_terms_merge() {
        let p = x(0) * 2.0 + th(0);
        let q = x(0) * 3.0;
        let r = p + q;
        let expected = x(0) * 5.0 + th(0);
        assert_eq!(r.terms(), expected.terms());
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn square_and_identity() {
        let sq = &x(0) * &x(0);
        assert_eq!(sq.terms(), Polynomial::monomial(Monomial::var_pow(Var::new(Block::X, 0), 2), 1.0).terms());
        let p = x(0) * 3.0 + th(1) * x(2) - 1.5;
        assert_eq!((&p * &Polynomial::constant(1.0)).terms(), p.terms());
    }

    #[test]
    fn partial_derivatives() {
        let p = &(&e(0) * &e(0)) * &th(0);
        let d = p.partial(Block::E, 0);
        assert_eq!(d.terms(), (&(e(0) * 2.0) * &th(0)).terms());
        assert!(Polynomial::constant(4.0).partial(Block::E, 0).is_zero());
    }

    #[test]
    fn substitution_examples() {
        // V(e, θ) = eᵀe + θ1 with e := 0 gives θ1
        let v = (0..4).fold(th(0), |acc, i| acc + &e(i) * &e(i));
        let zero = PolyVec::new(vec![Polynomial::zero(); 4]);
        assert_eq!(v.substitute(Block::E, &zero).unwrap().terms(), th(0).terms());
        // e1² with e := x gives x1²
        let sq = &e(0) * &e(0);
        let xs = PolyVec::new((0..1).map(x).collect());
        assert_eq!(sq.substitute(Block::E, &xs).unwrap().terms(), (&x(0) * &x(0)).terms());
        // wrong length
        let short = PolyVec::new(vec![Polynomial::zero(); 3]);
        assert!(v.substitute(Block::E, &short).is_err());
    }

    #[test]
    fn eval_examples() {
        let p = &x(0) * &x(0) + 1.0;
        let pt = Point::new().with(Block::X, &[2.0]);
        assert_eq!(p.eval(&pt).unwrap(), 5.0);
        assert_eq!(Polynomial::zero().eval(&Point::new()).unwrap(), 0.0);
        assert!(matches!(p.eval(&Point::new()), Err(Error::MissingBlock(_))));
    }

    #[test]
    fn small_coefficients_are_dropped() {
        let p = x(0) * 1e-13 + x(1);
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn powers_and_scaling() {
        let p = x(0) + 1.0;
        let cube = p.pow(3);
        assert_eq!(cube.coefficient(&Monomial::var_pow(Var::new(Block::X, 0), 2)), 3.0);
        let scaled = cube.scale_vars(|_| 2.0);
        let pt = Point::new().with(Block::X, &[0.7]);
        let direct = cube.eval(&Point::new().with(Block::X, &[1.4])).unwrap();
        assert!((scaled.eval(&pt).unwrap() - direct).abs() < 1e-12);
    }
}
