//! Quantum dynamics of optical fields in open resonators with spectrally
//! overlapping modes.
//!
//! The crate covers four views of the same linear open-system dynamics:
//!
//! - [`model`]: the system specification (mode frequencies, inside-outside
//!   coupling amplitudes, bath occupation), the damping matrix `γ = π W W†`
//!   and the non-Hermitian effective Hamiltonian `H = diag(ω) − iγ`.
//! - [`moments`]: exact evolution of Gaussian states (first moments,
//!   normal-ordered and anomalous covariances) under the multimode master
//!   equation, plus the thermal stationary state.
//! - [`trajectories`]: Monte Carlo ensembles of the c-number Langevin
//!   equation, used to cross-check [`moments`].
//! - [`resonances`]: biorthogonal decomposition of `H`, the nonorthogonality
//!   matrix `A = T†T`, Lamprecht–Ritsch coefficients and Petermann factors.
//! - [`memory`]: frequency-dependent couplings, memory kernels, bath noise
//!   correlations and a Volterra solver for the non-Markovian mean field.
//!
//! Units: ħ = 1; frequencies are in the caller's unit and times in its inverse.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod export;
pub mod linalg;
pub mod memory;
pub mod model;
pub mod moments;
pub mod quad;
pub mod resonances;
pub mod trajectories;

pub use error::{Error, ErrorKind, Result};
pub use linalg::{CMatrix, CVector};
pub use model::{DampingMatrix, EffectiveHamiltonian, SystemSpec};

pub use moments::{DriftMatrix, GaussianState};
pub use resonances::ResonanceDecomposition;
pub use trajectories::{Scheme, TrajectoryEnsemble};
