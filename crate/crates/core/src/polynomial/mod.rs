//! Sparse multivariate polynomials over named indeterminate blocks.

mod json;
mod monomial;
mod poly;
mod var;
mod vector;

pub use monomial::{monomials_up_to, Monomial};
pub use poly::{Point, Polynomial, COEFF_EPS};
pub use var::{Block, IndeterminateBlock, Universe, Var};
pub use vector::{PolyMat, PolyVec};
