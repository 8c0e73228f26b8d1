use std::ops::{Index, IndexMut};

use super::poly::{Point, Polynomial};
use super::var::{Block, Universe, Var};
use crate::error::{Error, Result};

/// Column vector of polynomials sharing one variable universe.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PolyVec {
    entries: Vec<Polynomial>,
}

impl PolyVec {
    pub fn new(entries: Vec<Polynomial>) -> Self {
        let u = entries
            .iter()
            .fold(Universe::empty(), |u, p| u.union(p.universe()));
        PolyVec {
            entries: entries.into_iter().map(|p| p.with_universe(&u)).collect(),
        }
    }

    pub fn zeros(n: usize) -> Self {
        PolyVec::new(vec![Polynomial::zero(); n])
    }

    /// The variables of `block` as a vector `(v1, ..., v_dim)`.
    pub fn vars(block: Block, dim: usize) -> Self {
        PolyVec::new((0..dim).map(|i| Polynomial::var(Var::new(block, i))).collect())
    }

    /// Constant vector.
    pub fn constants(values: &[f64]) -> Self {
        PolyVec::new(values.iter().map(|&c| Polynomial::constant(c)).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Polynomial> {
        self.entries.iter()
    }

    pub fn entries(&self) -> &[Polynomial] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<Polynomial> {
        self.entries
    }

    pub fn universe(&self) -> Universe {
        self.entries
            .first()
            .map(|p| p.universe().clone())
            .unwrap_or_default()
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    pub fn add(&self, other: &PolyVec) -> Result<PolyVec> {
        self.check_len(other)?;
        Ok(PolyVec::new(
            self.iter().zip(other.iter()).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &PolyVec) -> Result<PolyVec> {
        self.check_len(other)?;
        Ok(PolyVec::new(
            self.iter().zip(other.iter()).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, s: f64) -> PolyVec {
        PolyVec::new(self.iter().map(|p| p.scale(s)).collect())
    }

    pub fn dot(&self, other: &PolyVec) -> Result<Polynomial> {
        self.check_len(other)?;
        Ok(self
            .iter()
            .zip(other.iter())
            .fold(Polynomial::zero(), |acc, (a, b)| acc + a * b))
    }

    pub fn substitute(&self, block: Block, expr: &PolyVec) -> Result<PolyVec> {
        Ok(PolyVec::new(
            self.iter()
                .map(|p| p.substitute(block, expr))
                .collect::<Result<Vec<_>>>()?,
        ))
    }

    pub fn map(&self, f: impl Fn(&Polynomial) -> Polynomial) -> PolyVec {
        PolyVec::new(self.iter().map(f).collect())
    }

    /// Jacobian with respect to a block: entry `(i, j) = ∂self_i / ∂v_j`.
    pub fn jacobian(&self, block: Block, dim: usize) -> PolyMat {
        let mut m = PolyMat::zeros(self.len(), dim);
        for (i, p) in self.iter().enumerate() {
            for j in 0..dim {
                m[(i, j)] = p.partial(block, j);
            }
        }
        m.unify();
        m
    }

    pub fn eval(&self, pt: &Point) -> Result<Vec<f64>> {
        self.iter().map(|p| p.eval(pt)).collect()
    }

    pub fn eval_unchecked(&self, pt: &Point) -> Vec<f64> {
        self.iter().map(|p| p.eval_unchecked(pt)).collect()
    }

    fn check_len(&self, other: &PolyVec) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "vector lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

impl Index<usize> for PolyVec {
    type Output = Polynomial;
    fn index(&self, i: usize) -> &Polynomial {
        &self.entries[i]
    }
}

impl FromIterator<Polynomial> for PolyVec {
    fn from_iter<I: IntoIterator<Item = Polynomial>>(iter: I) -> Self {
        PolyVec::new(iter.into_iter().collect())
    }
}

/// Rectangular matrix of polynomials, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMat {
    rows: usize,
    cols: usize,
    entries: Vec<Polynomial>,
}

impl PolyMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        PolyMat {
            rows,
            cols,
            entries: vec![Polynomial::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Polynomial>>) -> Result<Self> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return Err(Error::Dimension("ragged polynomial matrix".into()));
        }
        let mut m = PolyMat {
            rows: nr,
            cols: nc,
            entries: rows.into_iter().flatten().collect(),
        };
        m.unify();
        Ok(m)
    }

    pub fn constant(values: &[Vec<f64>]) -> Result<Self> {
        PolyMat::from_rows(
            values
                .iter()
                .map(|r| r.iter().map(|&c| Polynomial::constant(c)).collect())
                .collect(),
        )
    }

    pub fn identity(n: usize) -> Self {
        let mut m = PolyMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Polynomial::constant(1.0);
        }
        m
    }

    fn unify(&mut self) {
        let u = self
            .entries
            .iter()
            .fold(Universe::empty(), |u, p| u.union(p.universe()));
        for p in &mut self.entries {
            *p = std::mem::take(p).with_universe(&u);
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> PolyVec {
        PolyVec::new(self.entries[i * self.cols..(i + 1) * self.cols].to_vec())
    }

    pub fn column(&self, j: usize) -> PolyVec {
        PolyVec::new((0..self.rows).map(|i| self[(i, j)].clone()).collect())
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    pub fn mul_vec(&self, v: &PolyVec) -> Result<PolyVec> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matrix with {} columns times vector of length {}",
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| {
                (0..self.cols).fold(Polynomial::zero(), |acc, j| acc + &self[(i, j)] * &v[j])
            })
            .collect())
    }

    pub fn mul(&self, other: &PolyMat) -> Result<PolyMat> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matrix product {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = PolyMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                out[(i, j)] = (0..self.cols)
                    .fold(Polynomial::zero(), |acc, k| acc + &self[(i, k)] * &other[(k, j)]);
            }
        }
        out.unify();
        Ok(out)
    }

    pub fn substitute(&self, block: Block, expr: &PolyVec) -> Result<PolyMat> {
        let mut out = PolyMat::zeros(self.rows, self.cols);
        for (k, p) in self.entries.iter().enumerate() {
            out.entries[k] = p.substitute(block, expr)?;
        }
        out.unify();
        Ok(out)
    }

    pub fn eval(&self, pt: &Point) -> Result<Vec<Vec<f64>>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].eval(pt)).collect())
            .collect()
    }

    pub fn eval_unchecked(&self, pt: &Point) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| self[(i, j)].eval_unchecked(pt))
                    .collect()
            })
            .collect()
    }

    pub fn entries(&self) -> &[Polynomial] {
        &self.entries
    }
}

impl Index<(usize, usize)> for PolyMat {
    type Output = Polynomial;
    fn index(&self, (i, j): (usize, usize)) -> &Polynomial {
        &self.entries[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for PolyMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Polynomial {
        &mut self.entries[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_vector_product() {
        let a = PolyMat::constant(&[vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap();
        let x = PolyVec::vars(Block::X, 2);
        let y = a.mul_vec(&x).unwrap();
        let pt = Point::new().with(Block::X, &[3.0, 5.0]);
        assert_eq!(y.eval(&pt).unwrap(), vec![13.0, -5.0]);
        assert!(a.mul_vec(&PolyVec::vars(Block::X, 3)).is_err());
    }

    #[test]
    fn jacobian_of_quadratic() {
        let x = PolyVec::vars(Block::X, 2);
        let f = PolyVec::new(vec![&x[0] * &x[1], &x[0] * &x[0]]);
        let j = f.jacobian(Block::X, 2);
        let pt = Point::new().with(Block::X, &[2.0, 3.0]);
        assert_eq!(j.eval(&pt).unwrap(), vec![vec![3.0, 2.0], vec![4.0, 0.0]]);
    }
}
