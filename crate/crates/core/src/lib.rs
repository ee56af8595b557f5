//! Solver library for stationary (ergodic) mean-field games with Neumann
//! boundary conditions, built around the variational formulation of the
//! coupled Hamilton-Jacobi-Bellman / Fokker-Planck system.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: rectangular cell-centered discretization with adjoint-consistent
//!   gradient/divergence/Laplacian and a zero-mean Neumann Poisson solver;
//! - [`model`]: power-model Hamiltonians, their Legendre transforms, the joint
//!   kinetic density `m L(-w/m)`, local couplings and Neumann-compatible
//!   mollifiers;
//! - [`exponents`]: critical exponents, regime classification and the ledger of
//!   explicit smallness constants;
//! - [`energy`]: the constrained energy functional, its regularized and
//!   linearized variants, and measured embedding constants;
//! - [`hjb`]: ergodic Hamilton-Jacobi solver (Newton on the bordered system);
//! - [`fp`]: stationary Fokker-Planck solver assembled as the exact transpose
//!   of the HJB linearization;
//! - [`minimizer`]: reduced-gradient descent over fluxes with the density
//!   eliminated through the Green operator;
//! - [`pipeline`]: full solves with mollification continuation, the Hopf-Cole
//!   cross-check, and the constructive experiments (multiplicity, scaling
//!   sweeps, blow-up monitoring, critical-case gates).

pub mod energy;
pub mod error;
pub mod exponents;
pub mod fp;
pub mod grid;
pub mod hjb;
mod linsolve;
pub mod minimizer;
pub mod model;
pub mod pipeline;
pub(crate) mod ser;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use energy::{EnergyReport, FlowPair};
pub use error::{Error, Result};
pub use exponents::{ConstantsLedger, Regime};
pub use grid::{Grid, ScalarField, VectorField};
pub use hjb::{DiffMode, ErgodicSolution};
pub use model::{Coupling, CouplingSign, Hamiltonian, Lagrangian, Mollifier};
pub use pipeline::{MfgSolution, SolveConfig};
