//! Classical simulator of a small liquid-state NMR quantum processor.
//!
//! The crate maps truncated oscillator Hamiltonians onto a system of
//! spin-1/2 nuclei, compiles the refocusing pulse programs that realise
//! them, executes those programs on density matrices and analyses the
//! resulting single-quantum peak amplitudes.
//!
//! Conventions used throughout:
//!
//! * `hbar = 1`; Hamiltonians are in rad/s, J couplings in Hz.
//! * Spin `k` (1-based) occupies tensor slot `k - 1`; slot 0 is the most
//!   significant. For two spins the basis order is `uu, ud, du, dd` and
//!   `sigma_z |u> = +|u>`.
//! * Propagators are `exp(-i H t)`; pulses are `exp(-i theta/2 sum sigma_axis)`.

pub mod encoding;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod oscillator;
pub mod program;
pub mod readout;
pub mod spin;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, DensityMatrix, StateVector, Unitary};
