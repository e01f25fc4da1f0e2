//! Classical and quantum dynamics of a degenerate, synchronously pumped
//! optical parametric oscillator whose signal cavity is tuned to the first
//! transverse mode family (Laguerre-Gauss modes with orbital angular
//! momentum `l = ±1`).
//!
//! The crate is organised bottom-up:
//!
//! * [`comb`] builds the pump comb, the phase-mismatch factors and the
//!   coupling matrix `L[m,q] = f[m,q] α[m+q]`.
//! * [`supermodes`] diagonalises the coupling matrix and gives the
//!   below-threshold squeezing spectra of each supermode.
//! * [`steady`] solves the above-threshold classical state and reconstructs
//!   the emitted spatiotemporal field.
//! * [`linear`] linearises around that state, checks the Goldstone and
//!   dark-mode eigenrelations and evaluates output noise spectra.
//! * [`sde`] integrates the positive-P stochastic equations for whole
//!   ensembles of trajectories.
//! * [`analysis`] turns ensembles into the orientation-phase diffusion law
//!   and homodyne spectra of the dark mode.
//! * [`io`] holds configuration loading and the on-disk formats.

pub mod analysis;
pub mod comb;
pub mod error;
pub mod exec;
pub mod io;
pub mod kernel;
pub mod linear;
pub mod sde;
pub mod steady;
pub mod supermodes;

pub use comb::{CombConfig, CombParams, MismatchKind, MismatchModel, PumpKind, PumpSpectrum};
pub use error::{Error, Result};
pub use exec::Execution;
pub use linear::{LinearModel, NoiseSpectrum};
pub use sde::{EnsembleParams, PPState};
pub use steady::{Regime, SteadyState};
pub use supermodes::SupermodeBasis;

/// Complex scalar used for positive-P amplitudes.
pub type C64 = num_complex::Complex64;
