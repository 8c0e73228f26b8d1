use std::collections::HashMap;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::polynomial::{Monomial, Polynomial, Var, COEFF_EPS};

/// Index of a scalar decision variable inside a [`super::SosProgram`].
pub type VarId = u32;

/// Affine function `constant + Σ coeff·var` of scalar decision variables.
///
/// Terms are sorted by variable id with duplicates merged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    terms: Vec<(VarId, f64)>,
}

impl LinExpr {
    pub fn zero() -> Self {
        LinExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr::scaled_var(v, 1.0)
    }

    pub fn scaled_var(v: VarId, c: f64) -> Self {
        LinExpr {
            constant: 0.0,
            terms: vec![(v, c)],
        }
    }

    pub fn from_terms(constant: f64, mut terms: Vec<(VarId, f64)>) -> Self {
        terms.sort_by_key(|t| t.0);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        LinExpr {
            constant,
            terms: out,
        }
    }

    pub fn terms(&self) -> &[(VarId, f64)] {
        &self.terms
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_negligible(&self) -> bool {
        self.terms.is_empty() && self.constant.abs() < COEFF_EPS
    }

    pub fn scale(&self, s: f64) -> LinExpr {
        LinExpr {
            constant: self.constant * s,
            terms: self.terms.iter().map(|&(v, c)| (v, c * s)).collect(),
        }
    }

    /// `self += s·other`, merging sorted term lists.
    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        self.constant += s * other.constant;
        if other.terms.is_empty() {
            return;
        }
        if self.terms.is_empty() {
            self.terms = other.terms.iter().map(|&(v, c)| (v, c * s)).collect();
            return;
        }
        let mut out = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.terms, &other.terms);
        while i < a.len() || j < b.len() {
            if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
                out.push(a[i]);
                i += 1;
            } else if i == a.len() || b[j].0 < a[i].0 {
                out.push((b[j].0, b[j].1 * s));
                j += 1;
            } else {
                let c = a[i].1 + s * b[j].1;
                if c != 0.0 {
                    out.push((a[i].0, c));
                }
                i += 1;
                j += 1;
            }
        }
        self.terms = out;
    }

    pub fn eval(&self, value: impl Fn(VarId) -> f64) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * value(v)).sum::<f64>()
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl AddAssign<&LinExpr> for LinExpr {
    fn add_assign(&mut self, rhs: &LinExpr) {
        self.add_scaled(rhs, 1.0);
    }
}

impl Add<&LinExpr> for &LinExpr {
    type Output = LinExpr;
    fn add(self, rhs: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl Sub<&LinExpr> for &LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: &LinExpr) -> LinExpr {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

impl Add<f64> for &LinExpr {
    type Output = LinExpr;
    fn add(self, rhs: f64) -> LinExpr {
        let mut out = self.clone();
        out.constant += rhs;
        out
    }
}

impl Mul<f64> for &LinExpr {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        self.scale(rhs)
    }
}

impl Neg for &LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self.scale(-1.0)
    }
}

/// Polynomial whose coefficients are affine in the decision variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolyExpr {
    terms: HashMap<Monomial, LinExpr>,
}

impl PolyExpr {
    pub fn zero() -> Self {
        PolyExpr::default()
    }

    pub fn from_poly(p: &Polynomial) -> Self {
        PolyExpr {
            terms: p
                .terms()
                .iter()
                .map(|(m, c)| (m.clone(), LinExpr::constant(*c)))
                .collect(),
        }
    }

    /// Constant polynomial with an affine coefficient.
    pub fn from_lin(l: LinExpr) -> Self {
        PolyExpr::from_terms([(Monomial::one(), l)])
    }

    /// `p · l` for a known polynomial `p` and affine scalar `l`.
    pub fn poly_times_lin(p: &Polynomial, l: &LinExpr) -> Self {
        PolyExpr {
            terms: p
                .terms()
                .iter()
                .map(|(m, c)| (m.clone(), l.scale(*c)))
                .collect(),
        }
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Monomial, LinExpr)>) -> Self {
        let mut out = PolyExpr::zero();
        for (m, l) in terms {
            out.add_term(m, &l, 1.0);
        }
        out
    }

    fn add_term(&mut self, m: Monomial, l: &LinExpr, s: f64) {
        self.terms
            .entry(m)
            .and_modify(|e| e.add_scaled(l, s))
            .or_insert_with(|| l.scale(s));
    }

    pub fn add_scaled(&mut self, other: &PolyExpr, s: f64) {
        for (m, l) in &other.terms {
            self.add_term(m.clone(), l, s);
        }
    }

    pub fn add_poly(&mut self, p: &Polynomial, s: f64) {
        for (m, c) in p.terms() {
            self.terms.entry(m.clone()).or_default().constant += s * c;
        }
    }

    pub fn scale(&self, s: f64) -> PolyExpr {
        PolyExpr {
            terms: self
                .terms
                .iter()
                .map(|(m, l)| (m.clone(), l.scale(s)))
                .collect(),
        }
    }

    /// Product with a known polynomial.
    pub fn mul_poly(&self, p: &Polynomial) -> PolyExpr {
        let mut out = PolyExpr::zero();
        for (m1, l) in &self.terms {
            for (m2, c) in p.terms() {
                out.add_term(m1.mul(m2), l, *c);
            }
        }
        out
    }

    /// Formal derivative with respect to an indeterminate.
    pub fn derivative(&self, v: Var) -> PolyExpr {
        let mut out = PolyExpr::zero();
        for (m, l) in &self.terms {
            if let Some((e, dm)) = m.derivative(v) {
                out.add_term(dm, l, e as f64);
            }
        }
        out
    }

    /// Monomials with a nonzero constant or any decision variable, grlex sorted.
    pub fn support(&self) -> Vec<Monomial> {
        let mut s: Vec<Monomial> = self
            .terms
            .iter()
            .filter(|(_, l)| !l.is_negligible())
            .map(|(m, _)| m.clone())
            .collect();
        s.sort();
        s
    }

    /// `(monomial, coefficient)` pairs in grlex order, negligible ones dropped.
    pub fn sorted_terms(&self) -> Vec<(&Monomial, &LinExpr)> {
        let mut t: Vec<(&Monomial, &LinExpr)> = self
            .terms
            .iter()
            .filter(|(_, l)| !l.is_negligible())
            .collect();
        t.sort_by(|a, b| a.0.cmp(b.0));
        t
    }

    pub fn coefficient(&self, m: &Monomial) -> Option<&LinExpr> {
        self.terms.get(m)
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(_, l)| !l.is_negligible())
            .map(|(m, _)| m.degree())
            .max()
            .unwrap_or(0)
    }

    /// Substitutes values for the decision variables.
    pub fn eval(&self, value: impl Fn(VarId) -> f64) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(m, l)| (m.clone(), l.eval(&value))))
    }

    /// Every decision variable that occurs.
    pub fn decision_vars(&self) -> Vec<VarId> {
        let mut v: Vec<VarId> = self
            .terms
            .values()
            .flat_map(|l| l.terms().iter().map(|t| t.0))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl From<&Polynomial> for PolyExpr {
    fn from(p: &Polynomial) -> Self {
        PolyExpr::from_poly(p)
    }
}

impl Add<&PolyExpr> for &PolyExpr {
    type Output = PolyExpr;
    fn add(self, rhs: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl Sub<&PolyExpr> for &PolyExpr {
    type Output = PolyExpr;
    fn sub(self, rhs: &PolyExpr) -> PolyExpr {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

impl Add<&Polynomial> for &PolyExpr {
    type Output = PolyExpr;
    fn add(self, rhs: &Polynomial) -> PolyExpr {
        let mut out = self.clone();
        out.add_poly(rhs, 1.0);
        out
    }
}

impl Sub<&Polynomial> for &PolyExpr {
    type Output = PolyExpr;
    fn sub(self, rhs: &Polynomial) -> PolyExpr {
        let mut out = self.clone();
        out.add_poly(rhs, -1.0);
        out
    }
}

impl Mul<&Polynomial> for &PolyExpr {
    type Output = PolyExpr;
    fn mul(self, rhs: &Polynomial) -> PolyExpr {
        self.mul_poly(rhs)
    }
}

impl Neg for &PolyExpr {
    type Output = PolyExpr;
    fn neg(self) -> PolyExpr {
        self.scale(-1.0)
    }
}

impl AddAssign<&PolyExpr> for PolyExpr {
    fn add_assign(&mut self, rhs: &PolyExpr) {
        self.add_scaled(rhs, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::Block;

    #[test]
    fn linexpr_merge() {
        let mut a = LinExpr::from_terms(1.0, vec![(3, 1.0), (1, 2.0), (3, 1.0)]);
        assert_eq!(a.terms(), &[(1, 2.0), (3, 2.0)]);
        a.add_scaled(&LinExpr::from_terms(0.5, vec![(1, 1.0), (2, 4.0)]), -2.0);
        assert_eq!(a.terms(), &[(2, -8.0), (3, 2.0)]);
        assert_eq!(a.constant, 0.0);
    }

    #[test]
    fn product_and_derivative() {
        let x = Var::new(Block::X, 0);
        let p = Polynomial::var(x);
        // (a + b x) · x, derivative a + 2 b x
        let mut e = PolyExpr::from_lin(LinExpr::var(0));
        e.add_scaled(&PolyExpr::poly_times_lin(&p, &LinExpr::var(1)), 1.0);
        let q = e.mul_poly(&p).derivative(x);
        let val = q.eval(|v| if v == 0 { 3.0 } else { 5.0 });
        let expect = Polynomial::constant(3.0) + &p * 10.0;
        assert_eq!(val, expect);
    }
}
