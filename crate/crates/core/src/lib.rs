//! Joint estimation of sparse precision matrices for related Gaussian datasets, split into a
//! common part shared by all datasets and individual parts.

pub mod bench;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod projection;
pub mod select;
pub mod solver;
pub mod synth;
pub mod types;

pub use error::{CsslError, Result};
pub use linalg::{Matrix, Vector};
pub use projection::ProjectionSpec;
pub use solver::{solve, solve_from, EigBounds, SolveDiagnostics, SolverConfig};
pub use types::{CovarianceSet, Dataset, Hyperparams, NormOrder, PrecisionDecomposition};
