//! Simulation of Markovian open quantum systems and gradient-descent
//! identification of unknown Hamiltonian and dissipation parameters from
//! time traces of a single observable.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] dense complex kernels: ladder/Pauli operators, tensor
//!   embedding, column-stacking vectorization, Padé matrix exponential and
//!   the matrix-free exponential action.
//! * [`lindblad`] Liouvillian construction, propagation and observable traces.
//! * [`models`] Jaynes-Cummings and ancilla-augmented qubit models, Lorentzian
//!   spectra.
//! * [`subspace`] exact restriction of the dynamics to the coordinates that
//!   can influence a measured trace.
//! * [`ident`] objective, gradients and the descent loop.
//! * [`spectral`] DFT-based initial guesses and spectrum reconstruction.

pub mod error;
pub mod ident;
pub mod linalg;
pub mod lindblad;
pub mod models;
pub mod spectral;
pub mod subspace;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, HilbertSpec, C64};
