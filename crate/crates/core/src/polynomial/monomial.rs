use std::cmp::Ordering;
use std::fmt;

use smallvec::SmallVec;

use super::var::Var;

/// A power product of indeterminates. Zero exponents are never stored and
/// factors are kept sorted by variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    factors: SmallVec<[(Var, u16); 4]>,
}

impl Monomial {
    pub fn one() -> Self {
        Monomial::default()
    }

    pub fn var(v: Var) -> Self {
        Monomial::var_pow(v, 1)
    }

    pub fn var_pow(v: Var, exp: u16) -> Self {
        let mut factors = SmallVec::new();
        if exp > 0 {
            factors.push((v, exp));
        }
        Monomial { factors }
    }

    pub fn from_factors(it: impl IntoIterator<Item = (Var, u16)>) -> Self {
        let mut m = Monomial::one();
        for (v, e) in it {
            m = m.mul(&Monomial::var_pow(v, e));
        }
        m
    }

    pub fn factors(&self) -> &[(Var, u16)] {
        &self.factors
    }

    pub fn is_one(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|&(_, e)| e as u32).sum()
    }

    pub fn exponent(&self, v: Var) -> u16 {
        self.factors
            .iter()
            .find(|(w, _)| *w == v)
            .map(|&(_, e)| e)
            .unwrap_or(0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.factors, &other.factors);
        let mut out: SmallVec<[(Var, u16); 4]> = SmallVec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial { factors: out }
    }

    /// Quotient `self / other` when `other` divides `self`.
    pub fn div(&self, other: &Monomial) -> Option<Monomial> {
        let mut out = self.factors.clone();
        for &(v, e) in &other.factors {
            let pos = out.iter().position(|(w, _)| *w == v)?;
            if out[pos].1 < e {
                return None;
            }
            out[pos].1 -= e;
            if out[pos].1 == 0 {
                out.remove(pos);
            }
        }
        Some(Monomial { factors: out })
    }

    /// Square root when every exponent is even.
    pub fn sqrt(&self) -> Option<Monomial> {
        if self.factors.iter().any(|&(_, e)| e % 2 == 1) {
            return None;
        }
        Some(Monomial {
            factors: self.factors.iter().map(|&(v, e)| (v, e / 2)).collect(),
        })
    }

    /// Formal derivative with respect to `v`: (multiplicity, monomial).
    pub fn derivative(&self, v: Var) -> Option<(u16, Monomial)> {
        let pos = self.factors.iter().position(|(w, _)| *w == v)?;
        let e = self.factors[pos].1;
        let mut out = self.factors.clone();
        if e == 1 {
            out.remove(pos);
        } else {
            out[pos].1 -= 1;
        }
        Some((e, Monomial { factors: out }))
    }

    /// Splits into the part over variables satisfying `pred` and the rest.
    pub fn split(&self, pred: impl Fn(Var) -> bool) -> (Monomial, Monomial) {
        let mut yes = SmallVec::new();
        let mut no = SmallVec::new();
        for &f in &self.factors {
            if pred(f.0) {
                yes.push(f);
            } else {
                no.push(f);
            }
        }
        (Monomial { factors: yes }, Monomial { factors: no })
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.factors.iter().map(|&(v, _)| v)
    }

    /// Evaluates with a variable lookup.
    pub fn eval_with(&self, mut value: impl FnMut(Var) -> f64) -> f64 {
        self.factors
            .iter()
            .map(|&(v, e)| value(v).powi(e as i32))
            .product()
    }
}

/// Graded lexicographic order: total degree first, then the exponent of the
/// earliest variable decides.
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        let (a, b) = (&self.factors, &other.factors);
        let n = a.len().min(b.len());
        for k in 0..n {
            let (va, ea) = a[k];
            let (vb, eb) = b[k];
            if va != vb {
                // the monomial carrying the earlier variable has the larger exponent on it
                return if va < vb {
                    Ordering::Greater
                } else {
                    Ordering::Less
                };
            }
            if ea != eb {
                return ea.cmp(&eb);
            }
        }
        a.len().cmp(&b.len())
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() {
            return f.write_str("1");
        }
        for (k, &(v, e)) in self.factors.iter().enumerate() {
            if k > 0 {
                f.write_str("*")?;
            }
            if e == 1 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{v}^{e}")?;
            }
        }
        Ok(())
    }
}

/// All monomials in `vars` with total degree in `[min_deg, max_deg]`,
/// sorted in graded lexicographic order.
pub fn monomials_up_to(vars: &[Var], min_deg: u32, max_deg: u32) -> Vec<Monomial> {
    fn rec(
        vars: &[Var],
        start: usize,
        remaining: u32,
        current: &mut Vec<(Var, u16)>,
        out: &mut Vec<Monomial>,
    ) {
        out.push(Monomial::from_factors(current.iter().copied()));
        if remaining == 0 {
            return;
        }
        for k in start..vars.len() {
            let merged = match current.last_mut() {
                Some(last) if last.0 == vars[k] => {
                    last.1 += 1;
                    true
                }
                _ => {
                    current.push((vars[k], 1));
                    false
                }
            };
            rec(vars, k, remaining - 1, current, out);
            if merged {
                current.last_mut().unwrap().1 -= 1;
            } else {
                current.pop();
            }
        }
    }
    let mut sorted = vars.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut out = Vec::new();
    rec(&sorted, 0, max_deg, &mut Vec::new(), &mut out);
    out.retain(|m| m.degree() >= min_deg);
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::var::Block;

    fn e(i: usize) -> Var {
        Var::new(Block::E, i)
    }

    #[test]
    fn product_merges_exponents() {
        let a = Monomial::from_factors([(e(0), 2), (e(2), 1)]);
        let b = Monomial::from_factors([(e(1), 1), (e(2), 3)]);
        let p = a.mul(&b);
        assert_eq!(p.factors(), &[(e(0), 2), (e(1), 1), (e(2), 4)]);
        assert_eq!(p.degree(), 7);
        assert_eq!(p.div(&b).unwrap(), a);
        assert!(a.div(&b).is_none());
    }

    #[test]
    fn grlex_order() {
        let one = Monomial::one();
        let x1 = Monomial::var(e(0));
        let x2 = Monomial::var(e(1));
        let x1x2 = x1.mul(&x2);
        let x1sq = x1.mul(&x1);
        let x2sq = x2.mul(&x2);
        let mut v = vec![x2sq.clone(), x1x2.clone(), one.clone(), x2.clone(), x1sq.clone(), x1.clone()];
        v.sort();
        assert_eq!(v, vec![one, x2, x1, x2sq, x1x2, x1sq]);
    }

    #[test]
    fn enumeration_counts() {
        let vars: Vec<Var> = (0..4).map(e).collect();
        // C(4+2, 2) = 15
        assert_eq!(monomials_up_to(&vars, 0, 2).len(), 15);
        assert_eq!(monomials_up_to(&vars, 2, 2).len(), 10);
        let nine: Vec<Var> = (0..9).map(e).collect();
        assert_eq!(monomials_up_to(&nine, 0, 4).len(), 715);
    }
}
