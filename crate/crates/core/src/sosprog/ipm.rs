//! Primal-dual interior-point method for [`ConicProblem`]s.
//!
//! Infeasible path-following with the HKM search direction and Mehrotra's
//! predictor-corrector. The Schur complement is assembled from the sparse
//! constraint matrices block by block and factored per connected group of rows
//! (rows that share no PSD block never couple). Free variables are eliminated
//! through a small saddle-point system built on top of those factors.

use faer::linalg::solvers::Solve;
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Mat, Par, Side};
use log::{debug, trace};
use nalgebra::DMatrix;

use super::conic::{ConicBackend, ConicProblem, ConicSolution, SolveStatus};
use crate::error::{Error, Result};

/// Relative primal residual below which an iterate counts as feasible.
const FEASIBLE_PINF: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct IpmSettings {
    pub max_iter: usize,
    /// Relative tolerance on primal/dual infeasibility and duality gap.
    pub tol: f64,
    /// Looser tolerance accepted when progress stalls.
    pub tol_inaccurate: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings {
            max_iter: 120,
            tol: 1e-8,
            tol_inaccurate: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct InteriorPoint {
    pub settings: IpmSettings,
}

impl InteriorPoint {
    pub fn new(settings: IpmSettings) -> Self {
        InteriorPoint { settings }
    }
}

impl ConicBackend for InteriorPoint {
    fn name(&self) -> &str {
        "ipm"
    }

    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution> {
        problem.validate()?;
        let mut data = Data::new(problem);
        let sol = data.run(&self.settings);
        Ok(sol)
    }
}

struct Block {
    n: usize,
    /// Global row ids touching this block.
    rows: Vec<usize>,
    /// Per local row: `(a, b, v)` with `a ≥ b`, `v` the matrix entry value.
    entries: Vec<Vec<(usize, usize, f64)>>,
    c: DMatrix<f64>,
}

struct Group {
    rows: Vec<usize>,
    /// Free variables with a coefficient in any row of the group.
    cols: Vec<usize>,
}

struct Data {
    m: usize,
    nf: usize,
    blocks: Vec<Block>,
    /// Free-variable coefficients, per row.
    af_rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    cf: Vec<f64>,
    groups: Vec<Group>,
    /// `(group, local index)` per row, `None` for rows without PSD entries.
    row_group: Vec<Option<(usize, usize)>>,
    free_rows: Vec<usize>,
    row_scale: Vec<f64>,
    b_scale: f64,
    c_scale: f64,
    offsets: Vec<usize>,
}

struct Factored {
    llt: Vec<Mat<f64>>,
    w: Vec<Mat<f64>>,
    saddle: Option<faer::linalg::solvers::PartialPivLu<f64>>,
}

struct Snapshot {
    merit: f64,
    xf: Vec<f64>,
    y: Vec<f64>,
    xs: Vec<DMatrix<f64>>,
    pobj: f64,
    pinf: f64,
    dinf: f64,
    gap: f64,
}

struct Direction {
    dxf: Vec<f64>,
    dy: Vec<f64>,
    dx: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
    /// Norm of the remaining primal residual.
    err: f64,
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inverse_pd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Largest step `α ≤ 1/frac` keeping `X + α dX ⪰ 0`, as a multiple of the
/// distance to the boundary.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(ch) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = ch.l();
    let mut s = dx.clone();
    // s = L⁻¹ dX L⁻ᵀ
    if !l.solve_lower_triangular_mut(&mut s) {
        return 0.0;
    }
    let mut st = s.transpose();
    if !l.solve_lower_triangular_mut(&mut st) {
        return 0.0;
    }
    let st = sym(&st);
    let lmin = st.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

impl Data {
    fn new(p: &ConicProblem) -> Self {
        let m = p.rows();
        let nf = p.free;
        let offsets = p.block_offsets();
        // var -> (block, a, b)
        let mut var_loc: Vec<Option<(usize, usize, usize)>> = vec![None; p.nvars()];
        for (j, &n) in p.blocks.iter().enumerate() {
            for a in 0..n {
                for b in 0..=a {
                    var_loc[offsets[j] + a * (a + 1) / 2 + b] = Some((j, a, b));
                }
            }
        }
        let mut row_norm2 = vec![0.0; m];
        for &(r, _, v) in &p.equalities {
            row_norm2[r] += v * v;
        }
        let row_scale: Vec<f64> = row_norm2
            .iter()
            .map(|&s| if s > 0.0 { 1.0 / s.sqrt() } else { 1.0 })
            .collect();
        let b_raw: Vec<f64> = p.rhs.iter().zip(&row_scale).map(|(b, s)| b * s).collect();
        let b_scale = b_raw.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        let b: Vec<f64> = b_raw.iter().map(|v| v / b_scale).collect();
        let c_scale = p.objective.iter().fold(1.0f64, |a, (_, c)| a.max(c.abs()));

        let mut af_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut blk_rows: Vec<Vec<(usize, usize, usize, f64)>> = vec![Vec::new(); p.blocks.len()];
        for &(r, var, v) in &p.equalities {
            let v = v * row_scale[r];
            if var < nf {
                af_rows[r].push((var, v));
            } else if let Some((j, a, bb)) = var_loc[var] {
                let val = if a == bb { v } else { v * 0.5 };
                blk_rows[j].push((r, a, bb, val));
            }
        }
        let mut cf = vec![0.0; nf];
        let mut cmats: Vec<DMatrix<f64>> =
            p.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for &(var, v) in &p.objective {
            let v = v / c_scale;
            if var < nf {
                cf[var] += v;
            } else if let Some((j, a, bb)) = var_loc[var] {
                if a == bb {
                    cmats[j][(a, a)] += v;
                } else {
                    cmats[j][(a, bb)] += 0.5 * v;
                    cmats[j][(bb, a)] += 0.5 * v;
                }
            }
        }
        let mut blocks = Vec::with_capacity(p.blocks.len());
        for (j, mut ents) in blk_rows.into_iter().enumerate() {
            ents.sort_by_key(|e| (e.0, e.1, e.2));
            let mut rows: Vec<usize> = Vec::new();
            let mut entries: Vec<Vec<(usize, usize, f64)>> = Vec::new();
            for (r, a, bb, v) in ents {
                if rows.last() != Some(&r) {
                    rows.push(r);
                    entries.push(Vec::new());
                }
                let last = entries.last_mut().unwrap();
                match last.last_mut() {
                    Some(e) if e.0 == a && e.1 == bb => e.2 += v,
                    _ => last.push((a, bb, v)),
                }
            }
            blocks.push(Block {
                n: p.blocks[j],
                rows,
                entries,
                c: std::mem::replace(&mut cmats[j], DMatrix::zeros(0, 0)),
            });
        }

        // Union rows that share a block.
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut has_psd = vec![false; m];
        for blk in &blocks {
            for &r in &blk.rows {
                has_psd[r] = true;
            }
            if let Some(&r0) = blk.rows.first() {
                for &r in &blk.rows[1..] {
                    let (x, y) = (find(&mut parent, r0), find(&mut parent, r));
                    if x != y {
                        parent[y] = x;
                    }
                }
            }
        }
        let mut root_group: Vec<Option<usize>> = vec![None; m];
        let mut groups: Vec<Group> = Vec::new();
        let mut row_group = vec![None; m];
        let mut free_rows = Vec::new();
        for r in 0..m {
            if !has_psd[r] {
                free_rows.push(r);
                continue;
            }
            let root = find(&mut parent, r);
            let g = *root_group[root].get_or_insert_with(|| {
                groups.push(Group {
                    rows: Vec::new(),
                    cols: Vec::new(),
                });
                groups.len() - 1
            });
            row_group[r] = Some((g, groups[g].rows.len()));
            groups[g].rows.push(r);
        }
        for g in &mut groups {
            let mut cols: Vec<usize> = g
                .rows
                .iter()
                .flat_map(|&r| af_rows[r].iter().map(|e| e.0))
                .collect();
            cols.sort_unstable();
            cols.dedup();
            g.cols = cols;
        }
        Data {
            m,
            nf,
            blocks,
            af_rows,
            b,
            cf,
            groups,
            row_group,
            free_rows,
            row_scale,
            b_scale,
            c_scale,
            offsets,
        }
    }

    /// `A_f x_f + Σ 𝒜_j(X_j)`; nonsymmetric `X_j` allowed.
    fn apply_a(&self, xf: &[f64], xs: &[DMatrix<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (r, row) in self.af_rows.iter().enumerate() {
            out[r] = row.iter().map(|&(k, v)| v * xf[k]).sum();
        }
        for (blk, x) in self.blocks.iter().zip(xs) {
            for (lr, ents) in blk.entries.iter().enumerate() {
                let mut s = 0.0;
                for &(a, b, v) in ents {
                    s += if a == b {
                        v * x[(a, a)]
                    } else {
                        v * (x[(a, b)] + x[(b, a)])
                    };
                }
                out[blk.rows[lr]] += s;
            }
        }
        out
    }

    /// `(A_fᵀ y, 𝒜_jᵀ(y))`.
    fn apply_at(&self, y: &[f64]) -> (Vec<f64>, Vec<DMatrix<f64>>) {
        let mut f = vec![0.0; self.nf];
        for (r, row) in self.af_rows.iter().enumerate() {
            for &(k, v) in row {
                f[k] += v * y[r];
            }
        }
        let mats = self
            .blocks
            .iter()
            .map(|blk| {
                let mut s = DMatrix::zeros(blk.n, blk.n);
                for (lr, ents) in blk.entries.iter().enumerate() {
                    let yr = y[blk.rows[lr]];
                    if yr == 0.0 {
                        continue;
                    }
                    for &(a, b, v) in ents {
                        s[(a, b)] += v * yr;
                        if a != b {
                            s[(b, a)] += v * yr;
                        }
                    }
                }
                s
            })
            .collect();
        (f, mats)
    }

    /// Schur complement per group, Cholesky factors, and the free-variable
    /// saddle system.
    fn factor(&self, xs: &[DMatrix<f64>], zis: &[DMatrix<f64>]) -> Result<Factored> {
        let mut ms: Vec<Mat<f64>> = self
            .groups
            .iter()
            .map(|g| Mat::zeros(g.rows.len(), g.rows.len()))
            .collect();
        for (j, blk) in self.blocks.iter().enumerate() {
            let (x, zi) = (&xs[j], &zis[j]);
            let n = blk.n;
            let mut t = DMatrix::<f64>::zeros(n, n);
            let locs: Vec<(usize, usize)> = blk
                .rows
                .iter()
                .map(|&r| self.row_group[r].expect("row with PSD entries"))
                .collect();
            for (lr, er) in blk.entries.iter().enumerate() {
                t.fill(0.0);
                for &(a, b, v) in er {
                    t.ger(v, &zi.column(a), &x.column(b), 1.0);
                    if a != b {
                        t.ger(v, &zi.column(b), &x.column(a), 1.0);
                    }
                }
                let (g, ir) = locs[lr];
                let mg = &mut ms[g];
                for ls in lr..blk.entries.len() {
                    let mut val = 0.0;
                    for &(c, d, w) in &blk.entries[ls] {
                        val += if c == d {
                            w * t[(c, c)]
                        } else {
                            w * (t[(d, c)] + t[(c, d)])
                        };
                    }
                    let (_, is) = locs[ls];
                    mg[(ir, is)] += val;
                    if is != ir {
                        mg[(is, ir)] += val;
                    }
                }
            }
        }
        let mut llt = Vec::with_capacity(ms.len());
        let mut ws = Vec::with_capacity(ms.len());
        let mut k = Mat::<f64>::zeros(self.nf, self.nf);
        for (g, mut mg) in ms.into_iter().enumerate() {
            let group = &self.groups[g];
            let nr = group.rows.len();
            let maxdiag = (0..nr).fold(0.0f64, |a, i| a.max(mg[(i, i)].abs()));
            let mut reg = 0.0;
            let l = loop {
                match mg.llt(Side::Lower) {
                    Ok(f) => break f.L().to_owned(),
                    Err(_) => {
                        let add = if reg == 0.0 {
                            1e-14 * maxdiag.max(1e-300)
                        } else {
                            reg * 99.0
                        };
                        reg += add;
                        for i in 0..nr {
                            mg[(i, i)] += add;
                        }
                        if reg > 1e-4 * maxdiag.max(1e-300) {
                            return Err(Error::Solver(
                                "Schur complement is not positive definite".into(),
                            ));
                        }
                    }
                }
            };
            if reg > 0.0 {
                trace!("schur group {g} ({nr} rows) regularized by {:.1e}", reg / maxdiag.max(1e-300));
            }
            let nc = group.cols.len();
            let mut w = Mat::<f64>::zeros(nr, nc);
            if nc > 0 {
                for (ir, &r) in group.rows.iter().enumerate() {
                    for &(kk, v) in &self.af_rows[r] {
                        let ic = group.cols.binary_search(&kk).unwrap();
                        w[(ir, ic)] += v;
                    }
                }
                solve_lower_triangular_in_place(l.as_ref(), w.as_mut(), Par::Seq);
                let kc = w.transpose() * &w;
                for (i, &ci) in group.cols.iter().enumerate() {
                    for (jj, &cj) in group.cols.iter().enumerate() {
                        k[(ci, cj)] += kc[(i, jj)];
                    }
                }
            }
            llt.push(l);
            ws.push(w);
        }
        let saddle = if self.nf + self.free_rows.len() > 0 {
            let nf = self.nf;
            let nfr = self.free_rows.len();
            let kmax = (0..nf).fold(0.0f64, |a, i| a.max(k[(i, i)].abs()));
            let delta = 1e-13 * kmax.max(1.0);
            let mut s = Mat::<f64>::zeros(nf + nfr, nf + nfr);
            for i in 0..nf {
                for jj in 0..nf {
                    s[(i, jj)] = k[(i, jj)];
                }
                s[(i, i)] += delta;
            }
            for (q, &r) in self.free_rows.iter().enumerate() {
                for &(kk, v) in &self.af_rows[r] {
                    s[(kk, nf + q)] -= v;
                    s[(nf + q, kk)] += v;
                }
                s[(nf + q, nf + q)] -= delta;
            }
            Some(s.partial_piv_lu())
        } else {
            None
        };
        Ok(Factored {
            llt,
            w: ws,
            saddle,
        })
    }

    /// Solves `M Δy + A_f Δx_f = h`, `A_fᵀ Δy = r_f`.
    fn solve_saddle(&self, f: &Factored, h: &[f64], rf: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nf = self.nf;
        let mut us: Vec<Mat<f64>> = Vec::with_capacity(self.groups.len());
        let mut g = vec![0.0; nf];
        for (gi, group) in self.groups.iter().enumerate() {
            let mut u = Mat::<f64>::from_fn(group.rows.len(), 1, |i, _| h[group.rows[i]]);
            solve_lower_triangular_in_place(f.llt[gi].as_ref(), u.as_mut(), Par::Seq);
            if !group.cols.is_empty() {
                let wu = f.w[gi].transpose() * &u;
                for (i, &c) in group.cols.iter().enumerate() {
                    g[c] += wu[(i, 0)];
                }
            }
            us.push(u);
        }
        let mut dxf = vec![0.0; nf];
        let mut dy = vec![0.0; self.m];
        if let Some(lu) = &f.saddle {
            let nfr = self.free_rows.len();
            let rhs = Mat::<f64>::from_fn(nf + nfr, 1, |i, _| {
                if i < nf {
                    g[i] - rf[i]
                } else {
                    h[self.free_rows[i - nf]]
                }
            });
            let sol = lu.solve(&rhs);
            for i in 0..nf {
                dxf[i] = sol[(i, 0)];
            }
            for (q, &r) in self.free_rows.iter().enumerate() {
                dy[r] = sol[(nf + q, 0)];
            }
        }
        for (gi, group) in self.groups.iter().enumerate() {
            let mut v = us[gi].clone();
            if !group.cols.is_empty() {
                let d = Mat::<f64>::from_fn(group.cols.len(), 1, |i, _| dxf[group.cols[i]]);
                let wd = &f.w[gi] * &d;
                for i in 0..v.nrows() {
                    v[(i, 0)] -= wd[(i, 0)];
                }
            }
            solve_upper_triangular_in_place(f.llt[gi].transpose(), v.as_mut(), Par::Seq);
            for (i, &r) in group.rows.iter().enumerate() {
                dy[r] = v[(i, 0)];
            }
        }
        (dxf, dy)
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        f: &Factored,
        xs: &[DMatrix<f64>],
        zis: &[DMatrix<f64>],
        rc: &[DMatrix<f64>],
        rp: &[f64],
        rd: &[DMatrix<f64>],
        rf: &[f64],
    ) -> Direction {
        // h = r_p − 𝒜(Rc − X − X r_d Z⁻¹)
        let w: Vec<DMatrix<f64>> = (0..self.blocks.len())
            .map(|j| &rc[j] - &xs[j] - &xs[j] * &rd[j] * &zis[j])
            .collect();
        let zero_f = vec![0.0; self.nf];
        let aw = self.apply_a(&zero_f, &w);
        let h: Vec<f64> = rp.iter().zip(&aw).map(|(a, b)| a - b).collect();
        let (dxf, dy) = self.solve_saddle(f, &h, rf);
        let (_, aty) = self.apply_at(&dy);
        let mut dx = Vec::with_capacity(self.blocks.len());
        let mut dz = Vec::with_capacity(self.blocks.len());
        for j in 0..self.blocks.len() {
            let dzj = &rd[j] - &aty[j];
            let g = &rc[j] - &xs[j] - &xs[j] * &dzj * &zis[j];
            dx.push(sym(&g));
            dz.push(dzj);
        }
        Direction { dxf, dy, dx, dz, err: f64::NAN }
    }

    /// [`Data::direction`] followed by iterative refinement of the primal and
    /// free-variable equations, which lose accuracy as the iterates approach
    /// the boundary.
    #[allow(clippy::too_many_arguments)]
    fn refined_direction(
        &self,
        f: &Factored,
        xs: &[DMatrix<f64>],
        zis: &[DMatrix<f64>],
        rc: &[DMatrix<f64>],
        rp: &[f64],
        rd: &[DMatrix<f64>],
        rf: &[f64],
    ) -> Direction {
        let mut d = self.direction(f, xs, zis, rc, rp, rd, rf);
        let zero_d: Vec<DMatrix<f64>> = self
            .blocks
            .iter()
            .map(|b| DMatrix::zeros(b.n, b.n))
            .collect();
        let scale = 1.0 + norm(rp) + norm(rf);
        let residual = |d: &Direction| {
            let ad = self.apply_a(&d.dxf, &d.dx);
            let ep: Vec<f64> = rp.iter().zip(&ad).map(|(a, b)| a - b).collect();
            let (atf, _) = self.apply_at(&d.dy);
            let ef: Vec<f64> = rf.iter().zip(&atf).map(|(a, b)| a - b).collect();
            (ep, ef)
        };
        let (mut ep, mut ef) = residual(&d);
        let mut err = norm(&ep) + norm(&ef);
        let mut err_p = norm(&ep);
        for _ in 0..3 {
            if err <= 1e-13 * scale {
                break;
            }
            let c = self.direction(f, xs, zis, xs, &ep, &zero_d, &ef);
            let cand = Direction {
                dxf: d.dxf.iter().zip(&c.dxf).map(|(a, b)| a + b).collect(),
                dy: d.dy.iter().zip(&c.dy).map(|(a, b)| a + b).collect(),
                dx: d.dx.iter().zip(&c.dx).map(|(a, b)| a + b).collect(),
                dz: d.dz.iter().zip(&c.dz).map(|(a, b)| a + b).collect(),
                err: f64::NAN,
            };
            let (ep2, ef2) = residual(&cand);
            let err2 = norm(&ep2) + norm(&ef2);
            if err2 >= err {
                break;
            }
            d = cand;
            ep = ep2;
            ef = ef2;
            err = err2;
            err_p = norm(&ep);
        }
        d.err = err_p;
        d
    }

    fn run(&mut self, st: &IpmSettings) -> ConicSolution {
        let nb = self.blocks.len();
        let nu: f64 = self.blocks.iter().map(|b| b.n as f64).sum::<f64>().max(1.0);
        let bnorm = norm(&self.b);
        let cnorm = (norm(&self.cf).powi(2)
            + self
                .blocks
                .iter()
                .map(|b| b.c.norm_squared())
                .sum::<f64>())
        .sqrt();
        let mut xf = vec![0.0; self.nf];
        let mut y = vec![0.0; self.m];
        let mut xs: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
        let mut zs: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
        for blk in &self.blocks {
            let n = blk.n as f64;
            let xi = 10f64.max(n.sqrt()).max(n);
            let eta = 10f64.max(n.sqrt()).max(blk.c.norm());
            xs.push(DMatrix::identity(blk.n, blk.n) * xi);
            zs.push(DMatrix::identity(blk.n, blk.n) * eta);
        }

        let mut status = SolveStatus::NumericalFailure;
        let mut message = String::from("iteration limit");
        let mut iters = 0;
        let mut stall = 0;
        let (mut pinf, mut dinf, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut pobj = 0.0;
        let mut best: Option<Snapshot> = None;
        // smallest-gap iterate that satisfies the equalities to working precision
        let mut feasible: Option<Snapshot> = None;
        for it in 0..st.max_iter {
            iters = it;
            let (atf, atm) = self.apply_at(&y);
            let ax = self.apply_a(&xf, &xs);
            let rp: Vec<f64> = self.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rf: Vec<f64> = self.cf.iter().zip(&atf).map(|(c, a)| c - a).collect();
            let rd: Vec<DMatrix<f64>> = (0..nb)
                .map(|j| &self.blocks[j].c - &atm[j] - &zs[j])
                .collect();
            pobj = self.cf.iter().zip(&xf).map(|(c, x)| c * x).sum::<f64>()
                + (0..nb)
                    .map(|j| frob_dot(&self.blocks[j].c, &xs[j]))
                    .sum::<f64>();
            let dobj: f64 = self.b.iter().zip(&y).map(|(b, y)| b * y).sum();
            let xz: f64 = (0..nb).map(|j| frob_dot(&xs[j], &zs[j])).sum();
            let mu = xz / nu;
            pinf = norm(&rp) / (1.0 + bnorm);
            dinf = (norm(&rf).powi(2) + rd.iter().map(|r| r.norm_squared()).sum::<f64>()).sqrt()
                / (1.0 + cnorm);
            gap = xz.abs() / (1.0 + pobj.abs() + dobj.abs());
            trace!(
                "ipm it {it}: pobj {pobj:.6e} dobj {dobj:.6e} pinf {pinf:.2e} dinf {dinf:.2e} gap {gap:.2e}"
            );
            if pinf < st.tol && dinf < st.tol && gap < st.tol {
                status = SolveStatus::Optimal;
                message.clear();
                break;
            }
            let merit = pinf.max(dinf).max(gap);
            let snap = || Snapshot {
                merit,
                xf: xf.clone(),
                y: y.clone(),
                xs: xs.clone(),
                pobj,
                pinf,
                dinf,
                gap,
            };
            if best.as_ref().map_or(true, |b| merit < b.merit) {
                best = Some(snap());
            }
            if pinf < FEASIBLE_PINF && feasible.as_ref().map_or(true, |b| gap < b.gap) {
                feasible = Some(snap());
            }
            let ynorm = norm(&y);
            if dobj > 0.0 && ynorm > 1e10 && dinf * (1.0 + cnorm) < 1e-6 * ynorm {
                status = SolveStatus::Infeasible;
                message = "dual ray detected (primal infeasible)".into();
                break;
            }
            let xfn = norm(&xf) + xs.iter().map(|x| x.norm()).sum::<f64>();
            if pobj < 0.0 && xfn > 1e10 && pinf * (1.0 + bnorm) < 1e-6 * xfn {
                status = SolveStatus::Infeasible;
                message = "primal ray detected (dual infeasible)".into();
                break;
            }
            let zis: Vec<DMatrix<f64>> = match zs.iter().map(inverse_pd).collect::<Option<Vec<_>>>() {
                Some(z) => z,
                None => {
                    message = "dual iterate lost definiteness".into();
                    break;
                }
            };
            let fac = match self.factor(&xs, &zis) {
                Ok(f) => f,
                Err(e) => {
                    message = e.to_string();
                    break;
                }
            };
            // Predictor.
            let rc0: Vec<DMatrix<f64>> = self
                .blocks
                .iter()
                .map(|b| DMatrix::zeros(b.n, b.n))
                .collect();
            let pred = self.refined_direction(&fac, &xs, &zis, &rc0, &rp, &rd, &rf);
            let ap = (0..nb)
                .map(|j| max_step(&xs[j], &pred.dx[j]))
                .fold(1.0f64, f64::min);
            let ad = (0..nb)
                .map(|j| max_step(&zs[j], &pred.dz[j]))
                .fold(1.0f64, f64::min);
            let mu_aff = (0..nb)
                .map(|j| {
                    frob_dot(
                        &(&xs[j] + &pred.dx[j] * ap),
                        &(&zs[j] + &pred.dz[j] * ad),
                    )
                })
                .sum::<f64>()
                / nu;
            let expo = 1f64.max(3.0 * ap.min(ad).powi(2));
            let sigma = (mu_aff / mu).max(0.0).min(1.0).powf(expo);
            // Corrector.
            let rc: Vec<DMatrix<f64>> = (0..nb)
                .map(|j| {
                    let n = self.blocks[j].n;
                    (DMatrix::identity(n, n) * (sigma * mu) - &pred.dx[j] * &pred.dz[j]) * &zis[j]
                })
                .collect();
            let dir = self.refined_direction(&fac, &xs, &zis, &rc, &rp, &rd, &rf);
            // a direction that still beats the current infeasibility is worth taking
            if dir.err > 0.1 * st.tol_inaccurate.max(pinf) * (1.0 + bnorm) {
                message = format!("inaccurate search direction ({:.1e})", dir.err);
                break;
            }
            let frac = 0.9 + 0.09 * ap.min(ad);
            let ap = (0..nb)
                .map(|j| frac * max_step(&xs[j], &dir.dx[j]))
                .fold(1.0f64, f64::min);
            let ad = (0..nb)
                .map(|j| frac * max_step(&zs[j], &dir.dz[j]))
                .fold(1.0f64, f64::min);
            for (x, d) in xf.iter_mut().zip(&dir.dxf) {
                *x += ap * d;
            }
            for (v, d) in y.iter_mut().zip(&dir.dy) {
                *v += ad * d;
            }
            for j in 0..nb {
                xs[j] += &dir.dx[j] * ap;
                zs[j] += &dir.dz[j] * ad;
            }
            if ap < 1e-8 && ad < 1e-8 {
                stall += 1;
                if stall >= 3 {
                    message = "step length stalled".into();
                    break;
                }
            } else {
                stall = 0;
            }
        }
        if status == SolveStatus::NumericalFailure {
            if let Some(b) = best.filter(|b| b.merit < pinf.max(dinf).max(gap)) {
                xf = b.xf;
                y = b.y;
                xs = b.xs;
                pobj = b.pobj;
                pinf = b.pinf;
                dinf = b.dinf;
                gap = b.gap;
            }
        }
        if status == SolveStatus::NumericalFailure
            && pinf < st.tol_inaccurate
            && dinf < st.tol_inaccurate
            && gap < st.tol_inaccurate
        {
            status = SolveStatus::Optimal;
            message = format!("reduced accuracy ({message})");
        }
        if status == SolveStatus::NumericalFailure && pinf >= FEASIBLE_PINF {
            if let Some(b) = feasible {
                xf = b.xf;
                y = b.y;
                xs = b.xs;
                pobj = b.pobj;
                pinf = b.pinf;
                dinf = b.dinf;
                gap = b.gap;
                message = format!("{message}, returning last feasible iterate");
            }
        }
        debug!(
            "ipm finished: {status} after {iters} iterations (pinf {pinf:.2e}, dinf {dinf:.2e}, gap {gap:.2e}) {message}"
        );
        self.unscale(status, xf, y, xs, pobj, pinf, dinf, gap, iters, message)
    }

    #[allow(clippy::too_many_arguments)]
    fn unscale(
        &self,
        status: SolveStatus,
        xf: Vec<f64>,
        y: Vec<f64>,
        xs: Vec<DMatrix<f64>>,
        pobj: f64,
        pinf: f64,
        dinf: f64,
        gap: f64,
        iterations: usize,
        message: String,
    ) -> ConicSolution {
        let nvars = self.offsets.last().map_or(self.nf, |&o| {
            o + self.blocks.last().map_or(0, |b| b.n * (b.n + 1) / 2)
        });
        let mut x = vec![0.0; nvars];
        for (i, v) in xf.iter().enumerate() {
            x[i] = v * self.b_scale;
        }
        let mut min_eig = 0.0f64;
        for (j, xm) in xs.iter().enumerate() {
            let n = self.blocks[j].n;
            for a in 0..n {
                for b in 0..=a {
                    x[self.offsets[j] + a * (a + 1) / 2 + b] = 0.5 * (xm[(a, b)] + xm[(b, a)]) * self.b_scale;
                }
            }
            if n > 0 {
                min_eig = min_eig.min(sym(xm).symmetric_eigenvalues().min() * self.b_scale);
            }
        }
        let y: Vec<f64> = y
            .iter()
            .zip(&self.row_scale)
            .map(|(v, s)| v * s * self.c_scale)
            .collect();
        ConicSolution {
            status,
            x,
            y,
            objective: pobj * self.b_scale * self.c_scale,
            max_psd_residual: -min_eig,
            primal_residual: pinf,
            dual_residual: dinf,
            gap,
            iterations,
            message,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lp_in_one_by_one_block() {
        // min x s.t. x = 1 + s, s ≥ 0 written as: x free, s in a 1×1 block.
        let p = ConicProblem {
            free: 1,
            blocks: vec![1],
            equalities: vec![(0, 0, 1.0), (0, 1, -1.0)],
            rhs: vec![1.0],
            objective: vec![(0, 1.0)],
        };
        let sol = InteriorPoint::default().solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-7, "{:?}", sol.x);
    }

    #[test]
    fn small_sdp_matches_eigenvalue() {
        // min ⟨C, X⟩ s.t. tr X = 1, X ⪰ 0  ->  λ_min(C)
        // C = [[2, 1], [1, 3]]; triangle vars (0,0), (1,0), (1,1)
        let p = ConicProblem {
            free: 0,
            blocks: vec![2],
            equalities: vec![(0, 0, 1.0), (0, 2, 1.0)],
            rhs: vec![1.0],
            objective: vec![(0, 2.0), (1, 2.0), (2, 3.0)],
        };
        let sol = InteriorPoint::default().solve(&p).unwrap();
        let expect = 2.5 - 0.5f64 * 5f64.sqrt();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - expect).abs() < 1e-7, "{}", sol.objective);
    }
}
