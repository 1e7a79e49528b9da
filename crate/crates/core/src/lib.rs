//! Bayesian identification of nonseparable Hamiltonian systems.
//!
//! A Hamiltonian is expanded in a polynomial dictionary, integrated with an
//! explicit symplectic scheme in an extended phase space, and its
//! coefficients are inferred from noisy trajectories through an unscented
//! Kalman filter likelihood. A least-squares regression on finite-difference
//! derivatives is provided as a baseline.

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod hamiltonian;
pub mod inference;
pub mod integrators;
pub mod ls;

pub use error::{Error, Result};
pub use hamiltonian::{
    build_dictionary, BasisDictionary, BasisKind, CherryHamiltonian, Hamiltonian, HamiltonianModel,
    PhaseState,
};
pub use integrators::{Propagator, Scheme, TaoConfig, Trajectory};
