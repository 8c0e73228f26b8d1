use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::polynomial::{Block, Point, PolyMat, PolyVec};

/// One-step map `x⁺ = F(x, u)` of `ẋ = f(x) + g(x) u` (blocks `x̂`, `û`)
/// under a zero-order-hold input, by one classical Runge–Kutta step.
#[derive(Clone, Debug)]
pub struct DiscreteMap {
    f: PolyVec,
    g: PolyMat,
    f_jac: PolyMat,
    /// `∂g_{·j}/∂x` for each input column `j`.
    g_jac: Vec<PolyMat>,
    pub ts: f64,
    pub n: usize,
    pub m: usize,
}

pub fn discretize(f: &PolyVec, g: &PolyMat, ts: f64) -> Result<DiscreteMap> {
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::Config(format!("sampling time must be positive, got {ts}")));
    }
    let n = f.len();
    if g.rows() != n {
        return Err(Error::Dimension(format!("f has {n} rows, g has {}", g.rows())));
    }
    let m = g.cols();
    Ok(DiscreteMap {
        f: f.clone(),
        g: g.clone(),
        f_jac: f.jacobian(Block::Xhat, n),
        g_jac: (0..m).map(|j| g.column(j).jacobian(Block::Xhat, n)).collect(),
        ts,
        n,
        m,
    })
}

fn to_matrix(rows: Vec<Vec<f64>>, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

impl DiscreteMap {
    fn point(x: &[f64], u: &[f64]) -> Point {
        Point::new().with(Block::Xhat, x).with(Block::Uhat, u)
    }

    /// `f(x) + g(x) u`.
    pub fn rate(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let pt = Self::point(x, u);
        let mut v = self.f.eval_unchecked(&pt);
        let g = self.g.eval_unchecked(&pt);
        for (i, row) in g.iter().enumerate() {
            v[i] += row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
        v
    }

    /// Rate with its partial derivatives in `x` and `u`.
    fn rate_jacobian(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let pt = Self::point(x, u);
        let gu = to_matrix(self.g.eval_unchecked(&pt), self.n, self.m);
        let mut jx = to_matrix(self.f_jac.eval_unchecked(&pt), self.n, self.n);
        for (j, gj) in self.g_jac.iter().enumerate() {
            jx += to_matrix(gj.eval_unchecked(&pt), self.n, self.n) * u[j];
        }
        (self.rate(x, u), jx, gu)
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let h = self.ts;
        let shift = |k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
        let k1 = self.rate(x, u);
        let k2 = self.rate(&shift(&k1, 0.5 * h), u);
        let k3 = self.rate(&shift(&k2, 0.5 * h), u);
        let k4 = self.rate(&shift(&k3, h), u);
        (0..self.n)
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }

    /// `(F(x, u), ∂F/∂x, ∂F/∂u)` by differentiating the Runge–Kutta stages.
    pub fn step_jacobian(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (n, h) = (self.n, self.ts);
        let id = DMatrix::<f64>::identity(n, n);
        let shift = |k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };

        let (k1, j1x, j1u) = self.rate_jacobian(x, u);
        let (k1x, k1u) = (j1x, j1u);
        let (k2, j2x, j2u) = self.rate_jacobian(&shift(&k1, 0.5 * h), u);
        let k2x = &j2x * (&id + &k1x * (0.5 * h));
        let k2u = &j2x * &k1u * (0.5 * h) + j2u;
        let (k3, j3x, j3u) = self.rate_jacobian(&shift(&k2, 0.5 * h), u);
        let k3x = &j3x * (&id + &k2x * (0.5 * h));
        let k3u = &j3x * &k2u * (0.5 * h) + j3u;
        let (k4, j4x, j4u) = self.rate_jacobian(&shift(&k3, h), u);
        let k4x = &j4x * (&id + &k3x * h);
        let k4u = &j4x * &k3u * h + j4u;

        let next = (0..n)
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        let a = id + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
        let b = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);
        (next, a, b)
    }
}
