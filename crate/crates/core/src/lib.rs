//! Planner–tracker safety synthesis with sum-of-squares programming.
//!
//! The crate computes a parametric tracking-error bound `O^θ = {e : V(e, θ) ≤ γ}`
//! together with a polynomial tracking controller `κ(e, x̂, û, δ, θ)`, sizes the
//! planner constraint sets so that the planner set enlarged by the error bound
//! stays inside the tracker's state constraints, and checks the result in
//! closed-loop MPC simulation.

pub mod certsynth;
pub mod error;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod planner;
pub mod polynomial;
pub mod semialg;
pub mod simulator;
pub mod sosprog;
pub mod thetaselect;
pub mod verifier;

pub use error::{Error, Result};
