//! Independent polynomial oracle: polynomials kept as raw term lists and
//! evaluated by explicit products, without the crate's arithmetic.

use rand::Rng;

use safesynth::polynomial::{Block, IndeterminateBlock, Monomial, Point, PolyVec, Polynomial, Universe, Var};

/// `(coefficient, exponent per variable)`.
pub type Terms = Vec<(f64, Vec<u16>)>;

/// Variables used by the oracle: three in `x`, two in `e`.
pub fn oracle_vars() -> Vec<Var> {
    vec![
        Block::X.var(0),
        Block::X.var(1),
        Block::X.var(2),
        Block::E.var(0),
        Block::E.var(1),
    ]
}

pub const NX: usize = 3;

/// Up to `max_terms` terms of total degree ≤ `max_deg` over the first
/// `nvars` oracle variables.
pub fn random_terms(rng: &mut impl Rng, nvars: usize, max_deg: u32, max_terms: usize) -> Terms {
    let count = rng.gen_range(1..=max_terms);
    (0..count)
        .map(|_| {
            let mut exps = vec![0u16; oracle_vars().len()];
            let deg = rng.gen_range(0..=max_deg);
            for _ in 0..deg {
                exps[rng.gen_range(0..nvars)] += 1;
            }
            (rng.gen_range(-2.0..2.0), exps)
        })
        .collect()
}

pub fn to_poly(terms: &Terms) -> Polynomial {
    let vars = oracle_vars();
    Polynomial::from_terms(terms.iter().map(|(c, exps)| {
        let f = vars.iter().zip(exps).filter(|(_, &e)| e > 0).map(|(&v, &e)| (v, e));
        (Monomial::from_factors(f), *c)
    }))
    .with_universe(&Universe::new([
        IndeterminateBlock::new(Block::X, NX),
        IndeterminateBlock::new(Block::E, 2),
    ]))
}

pub fn eval_terms(terms: &Terms, at: &[f64]) -> f64 {
    terms
        .iter()
        .map(|(c, exps)| c * at.iter().zip(exps).map(|(x, &e)| x.powi(e as i32)).product::<f64>())
        .sum()
}

/// `Σ |term|` at `at`, the scale against which cancellation is measured.
pub fn abs_scale(terms: &Terms, at: &[f64]) -> f64 {
    terms
        .iter()
        .map(|(c, exps)| (c * at.iter().zip(exps).map(|(x, &e)| x.powi(e as i32)).product::<f64>()).abs())
        .sum()
}

pub fn point(at: &[f64]) -> Point {
    Point::new().with(Block::X, &at[..NX]).with(Block::E, &at[NX..])
}

pub fn random_point(rng: &mut impl Rng) -> Vec<f64> {
    (0..oracle_vars().len()).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

/// Richardson-extrapolated central difference; exact up to rounding for
/// degree ≤ 4 in the differentiated variable.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, at: &[f64], i: usize, h: f64) -> f64 {
    let d = |h: f64| {
        let (mut p, mut m) = (at.to_vec(), at.to_vec());
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    };
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

#[derive(Clone, Copy, Debug)]
pub enum Op {
    Add,
    Mul,
    Derivative,
    PartialEval,
    Substitute,
}

pub const OPS: [Op; 5] = [Op::Add, Op::Mul, Op::Derivative, Op::PartialEval, Op::Substitute];

/// One random case: `(crate value, oracle value, scale)`.
pub fn oracle_case(rng: &mut impl Rng, op: Op) -> (f64, f64, f64) {
    let n = oracle_vars().len();
    let at = random_point(rng);
    let p = random_terms(rng, n, 4, 8);
    match op {
        Op::Add => {
            let q = random_terms(rng, n, 4, 8);
            let got = to_poly(&p).add(&to_poly(&q)).eval(&point(&at)).unwrap();
            let want = eval_terms(&p, &at) + eval_terms(&q, &at);
            (got, want, abs_scale(&p, &at) + abs_scale(&q, &at))
        }
        Op::Mul => {
            let q = random_terms(rng, n, 3, 6);
            let got = to_poly(&p).mul(&to_poly(&q)).eval(&point(&at)).unwrap();
            let want = eval_terms(&p, &at) * eval_terms(&q, &at);
            (got, want, abs_scale(&p, &at) * abs_scale(&q, &at))
        }
        Op::Derivative => {
            let i = rng.gen_range(0..n);
            let got = to_poly(&p).derivative(oracle_vars()[i]).eval(&point(&at)).unwrap();
            let want = central_difference(|y| eval_terms(&p, y), &at, i, 1e-2);
            let bumped: Vec<f64> = at.iter().map(|v| v.abs() + 1.0).collect();
            (got, want, abs_scale(&p, &bumped))
        }
        Op::PartialEval => {
            let got = to_poly(&p).partial_eval(Block::X, &at[..NX]).eval(&point(&at)).unwrap();
            (got, eval_terms(&p, &at), abs_scale(&p, &at))
        }
        Op::Substitute => {
            // x_i := q_i(e)
            let inner: Vec<Terms> = (0..NX).map(|_| random_terms(rng, n, 2, 3)).collect();
            let inner: Vec<Terms> = inner
                .into_iter()
                .map(|t| {
                    t.into_iter()
                        .map(|(c, mut e)| {
                            e[..NX].iter_mut().for_each(|v| *v = 0);
                            (c, e)
                        })
                        .collect()
                })
                .collect();
            let exprs = PolyVec::new(inner.iter().map(to_poly).collect());
            let got = to_poly(&p)
                .substitute(Block::X, &exprs)
                .unwrap()
                .eval(&point(&at))
                .unwrap();
            let mut moved = at.clone();
            for i in 0..NX {
                moved[i] = eval_terms(&inner[i], &at);
            }
            (got, eval_terms(&p, &moved), abs_scale(&p, &moved))
        }
    }
}

/// Relative agreement measured against the term scale.
pub fn rel_error(got: f64, want: f64, scale: f64) -> f64 {
    (got - want).abs() / scale.max(want.abs()).max(1e-300)
}
