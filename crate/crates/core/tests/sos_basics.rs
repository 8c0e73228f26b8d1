use safesynth::polynomial::{Block, Monomial, Polynomial, Var};
use safesynth::sosprog::{InteriorPoint, LinExpr, PolyExpr, SolveStatus, SosProgram};

fn x(i: usize) -> Polynomial {
    Polynomial::var(Var::new(Block::X, i))
}

#[test]
fn square_is_sos() {
    let mut prog = SosProgram::new();
    let id = prog.add_sos(PolyExpr::from_poly(&(&x(0) * &x(0))), "x1^2");
    let sol = prog.solve(&InteriorPoint::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.matching_residual(id) <= 1e-8);
}

#[test]
fn shifted_quadratic_gram() {
    let p = &x(0) * &x(0) + &x(0) * 2.0 + 2.0;
    let mut prog = SosProgram::new();
    let id = prog.add_sos(PolyExpr::from_poly(&p), "q");
    let sol = prog.solve(&InteriorPoint::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    let g = sol.constraint_gram(id).unwrap();
    let expect = [[2.0, 1.0], [1.0, 1.0]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((g[(i, j)] - expect[i][j]).abs() < 1e-6, "{g}");
        }
    }
    assert!(g.symmetric_eigenvalues().min() > 0.0);
}

#[test]
fn motzkin_rejected() {
    let (a, b) = (x(0), x(1));
    let a2 = &a * &a;
    let b2 = &b * &b;
    let p = &(&a2 * &a2) * &b2 + &(&a2 * &b2) * &b2 - &(&a2 * &b2) * 3.0 + 1.0;
    let mut prog = SosProgram::new();
    prog.add_sos(PolyExpr::from_poly(&p), "motzkin");
    let sol = prog.solve(&InteriorPoint::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible, "margin {:?}", sol.margin);
}

#[test]
fn scalar_minimum() {
    let mut prog = SosProgram::new();
    let g = prog.new_scalar();
    prog.add_nonneg(&g - &LinExpr::constant(1.0), "g>=1");
    prog.minimize(g.clone());
    let sol = prog.solve(&InteriorPoint::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.value(&g) - 1.0).abs() < 1e-7);
    let _ = Monomial::one();
}
