use std::collections::{HashMap, HashSet};

use crate::polynomial::{Block, Monomial, Var};

/// Gram basis for an expression with the given support.
///
/// Candidates are the monomials `z` whose exponents satisfy the half-range
/// bounds of the support along total degree, each block degree and each single
/// variable (projections of the Newton polytope). Then a monomial is dropped
/// while `z²` is outside the support and no other basis pair produces `z²`,
/// since its diagonal Gram entry would be forced to zero.
pub fn gram_basis(support: &[Monomial]) -> Vec<Monomial> {
    if support.is_empty() {
        return Vec::new();
    }
    let mut vars: Vec<Var> = support.iter().flat_map(|m| m.vars()).collect();
    vars.sort();
    vars.dedup();
    let range = |f: &dyn Fn(&Monomial) -> u32| {
        support.iter().fold((u32::MAX, 0u32), |(lo, hi), m| {
            let v = f(m);
            (lo.min(v), hi.max(v))
        })
    };
    let (dlo, dhi) = range(&|m: &Monomial| m.degree());
    let var_ranges: Vec<(Var, u32, u32)> = vars
        .iter()
        .map(|&v| {
            let (lo, hi) = range(&|m: &Monomial| m.exponent(v) as u32);
            (v, lo, hi)
        })
        .collect();
    let mut blocks: Vec<Block> = vars.iter().map(|v| v.block).collect();
    blocks.dedup();
    let block_deg = |m: &Monomial, b: Block| -> u32 {
        m.factors()
            .iter()
            .filter(|(v, _)| v.block == b)
            .map(|&(_, e)| e as u32)
            .sum()
    };
    let block_ranges: Vec<(Block, u32, u32)> = blocks
        .iter()
        .map(|&b| {
            let (lo, hi) = range(&|m: &Monomial| block_deg(m, b));
            (b, lo, hi)
        })
        .collect();
    let fits = |x: u32, lo: u32, hi: u32| 2 * x >= lo && 2 * x <= hi;
    let mut basis: Vec<Monomial> =
        crate::polynomial::monomials_up_to(&vars, dlo.div_ceil(2), dhi / 2)
            .into_iter()
            .filter(|z| {
                var_ranges
                    .iter()
                    .all(|&(v, lo, hi)| fits(z.exponent(v) as u32, lo, hi))
                    && block_ranges
                        .iter()
                        .all(|&(b, lo, hi)| fits(block_deg(z, b), lo, hi))
            })
            .collect();

    let support: HashSet<&Monomial> = support.iter().collect();
    loop {
        let mut count: HashMap<Monomial, usize> = HashMap::new();
        for i in 0..basis.len() {
            for j in 0..=i {
                *count.entry(basis[i].mul(&basis[j])).or_insert(0) += 1;
            }
        }
        let before = basis.len();
        basis.retain(|z| {
            let sq = z.mul(z);
            support.contains(&sq) || count.get(&sq).copied().unwrap_or(0) > 1
        });
        if basis.len() == before {
            break;
        }
    }
    basis
}
