//! Adaptive ADMM for nonconvex, linearly constrained problems with
//! block-separable box constraints.

pub mod admm;
pub mod bench;
pub mod error;
pub mod fista;
pub mod generate;
pub mod io;
pub mod linalg;
pub mod problem;
pub mod sweep;

pub use error::{FistaError, GenerateError, IoError, ProblemError, SolverError, SweepError};
pub use linalg::BlockVector;
pub use problem::{BlockProblem, ProxTerm, SmoothTerm};
