mod common;

use common::poly::{oracle_case, random_terms, rel_error, to_poly, OPS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use safesynth::polynomial::{Block, Point};

const TOL: f64 = 1e-8;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn operations_match_direct_evaluation(seed in any::<u64>(), op in 0usize..OPS.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (got, want, scale) = oracle_case(&mut rng, OPS[op]);
        prop_assert!(rel_error(got, want, scale) <= TOL, "{:?}: {got} vs {want}", OPS[op]);
    }

    #[test]
    fn addition_commutes_and_cancels(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = to_poly(&random_terms(&mut rng, 5, 4, 8));
        let q = to_poly(&random_terms(&mut rng, 5, 4, 8));
        prop_assert_eq!(p.add(&q), q.add(&p));
        prop_assert!(p.sub(&p).is_zero());
    }

    #[test]
    fn product_degree_adds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = to_poly(&random_terms(&mut rng, 5, 4, 8));
        let q = to_poly(&random_terms(&mut rng, 5, 3, 6));
        let pq = p.mul(&q);
        prop_assert!(pq.degree() <= p.degree() + q.degree());
    }
}

#[test]
fn fixed_seed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..500 {
        let op = OPS[k % OPS.len()];
        let (got, want, scale) = oracle_case(&mut rng, op);
        assert!(rel_error(got, want, scale) <= TOL, "case {k} {op:?}: {got} vs {want}");
    }
}

#[test]
fn partial_eval_leaves_other_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = to_poly(&random_terms(&mut rng, 5, 4, 8));
    let r = p.partial_eval(Block::X, &[0.1, 0.2, 0.3]);
    assert!(!r.depends_on(Block::X));
    let pt = Point::new().with(Block::E, &[0.4, -0.5]);
    let full = pt.clone().with(Block::X, &[0.1, 0.2, 0.3]);
    assert!((r.eval(&pt).unwrap() - p.eval(&full).unwrap()).abs() < 1e-12);
}
