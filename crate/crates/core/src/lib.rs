//! Asymptotic communication cost of simulating a conditional process
//! `P(s|a,b)` by minimizing channel capacity over the channels whose
//! marginals reproduce it.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar for callers who don't care.

pub mod capacity;
pub mod dual;
pub mod error;
mod linalg;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod sequence;
pub mod solver;

pub use capacity::{ChannelMatrix, InputPrior};
pub use error::{Error, Result};
pub use model::{nonplanar_problem, planar_problem, ProcessSpec};
pub use oracle::{brute_force_complexity, DenseChannel, OracleEstimate};
pub use scalar::Real;
pub use sequence::SequenceSpace;
pub use solver::{solve, CapacityMode, Certificate, PriorMode, SolveResult, SolverConfig, Termination};

pub type ProcessSpecF64 = ProcessSpec<f64>;
pub type ProcessSpecF32 = ProcessSpec<f32>;
pub type SolverConfigF64 = SolverConfig<f64>;
pub type SolverConfigF32 = SolverConfig<f32>;
pub type SolveResultF64 = SolveResult<f64>;
pub type SolveResultF32 = SolveResult<f32>;
pub type CertificateF64 = Certificate<f64>;
pub type InputPriorF64 = InputPrior<f64>;
pub type ChannelMatrixF64 = ChannelMatrix<f64>;
pub type DenseChannelF64 = DenseChannel<f64>;
pub type OracleEstimateF64 = OracleEstimate<f64>;
