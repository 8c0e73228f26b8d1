//! SOS programs compiled to semidefinite programs.

mod basis;
mod conic;
mod expr;
mod ipm;
mod program;

pub use basis::gram_basis;
pub use conic::{tri_index, ConicBackend, ConicProblem, ConicSolution, SolveStatus};
pub use expr::{LinExpr, PolyExpr, VarId};
pub use ipm::{InteriorPoint, IpmSettings};
pub use program::{
    ConstraintId, DecisionPoly, SosProgram, SosSolution, FEASIBILITY_MARGIN_CAP, FEASIBILITY_TOL,
};

/// Backend selected by name (`"ipm"` is the only built-in one).
pub fn backend_by_name(name: &str) -> crate::Result<Box<dyn ConicBackend>> {
    match name {
        "ipm" | "default" => Ok(Box::new(InteriorPoint::default())),
        other => Err(crate::Error::Config(format!("unknown conic solver `{other}`"))),
    }
}

/// Passes problems through to `inner` and writes each one, with its status,
/// as `p<k>_<status>.json` into `dir`.
pub struct Dumping<B> {
    pub inner: B,
    pub dir: std::path::PathBuf,
    count: std::sync::atomic::AtomicUsize,
}

impl<B: ConicBackend> Dumping<B> {
    pub fn new(inner: B, dir: impl Into<std::path::PathBuf>) -> Self {
        Dumping {
            inner,
            dir: dir.into(),
            count: Default::default(),
        }
    }
}

impl<B: ConicBackend> ConicBackend for Dumping<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn solve(&self, problem: &ConicProblem) -> crate::Result<ConicSolution> {
        let sol = self.inner.solve(problem)?;
        let k = self.count.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let path = self.dir.join(format!("p{k:04}_{}.json", sol.status));
        std::fs::write(path, problem.to_json()?)?;
        Ok(sol)
    }
}
