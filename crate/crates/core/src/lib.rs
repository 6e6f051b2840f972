//! Solvers for the time-fractional diffusion equation `∂_t^α u - ∇·(κ∇u) = f` on the unit square.
//!
//! The crate combines a two-level P1 discretization, a wavelet-edge multiscale space, a
//! sum-of-exponentials compression of the Caputo history, and a parareal iteration in time.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiment;
pub mod fem;
pub mod mesh;
pub mod multiscale;
pub mod oracles;
pub mod parareal;
pub mod soe;
pub mod solvers;
pub mod sparse;
pub mod time_stepping;

pub use error::{Result, WempError};
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use fem::{CoefficientField, OperatorPair};
pub use mesh::{CoarseNeighborhood, TwoLevelMesh};
pub use multiscale::{MultiscaleSpace, PartitionOfUnity};
pub use parareal::{PararealIterate, PararealState, PropagatorContext};
pub use soe::{SoeApproximation, StepCoefficients};
pub use solvers::{DiscreteSystem, ProblemSpec, Trajectory};
pub use sparse::SparseMatrix;
pub use time_stepping::{HistoryState, L1Coefficients, SoeStepper};
