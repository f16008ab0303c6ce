//! Synthetic confocal fluorescence photon counts from a diffusing molecule,
//! and Hamiltonian Monte Carlo reconstruction of the molecule's trajectory
//! with a fully explicit Störmer–Verlet integrator (SVEX) or a Strang-split
//! implicit–explicit integrator (IMEX).

pub mod error;
pub mod harness;
pub mod integrators;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod tridiag;

pub use error::{Error, Result};
pub use model::{ExperimentParams, Measurements, Signal, TimeMesh, Trajectory};
pub use posterior::{HmcParams, PosteriorProblem, Scheme};
pub use rng::RandomStream;
pub use tridiag::TridiagonalOperator;
