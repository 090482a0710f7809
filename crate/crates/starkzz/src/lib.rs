//! Desk-scale simulation and analysis of a microwave-activated tunable ZZ
//! interaction between two fixed-frequency, fixed-coupling transmons.
//!
//! The toolkit covers:
//! - construction and exact diagonalization of the driven two-transmon
//!   Hamiltonian in the drive frame ([`hamiltonian`], [`spectrum`]);
//! - closed-form perturbative ZZ rates and the conditional-Stark heuristic
//!   ([`perturbation`]);
//! - a microwave-crosstalk forward model and least-squares crosstalk fitting
//!   ([`crosstalk`]);
//! - shaped-pulse unitary dynamics, simulated Ramsey extraction, conditional
//!   Bloch vectors, R-metric calibration sweeps and local-Z calibration
//!   ([`dynamics`]);
//! - randomized-benchmarking decay fits and fidelity arithmetic
//!   ([`benchmarking`]).
//!
//! Unit convention: every stored frequency and amplitude is an ordinary
//! frequency in MHz; times are in ns unless a function says otherwise. The
//! product `f_MHz * t_ns * 1e-3` is a phase in cycles.

pub mod benchmarking;
pub mod crosstalk;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod hamiltonian;
pub mod perturbation;
pub mod spectrum;

pub use error::{Error, Result};
pub use hamiltonian::{
    build_hamiltonian, ladder_operator, DriveConfig, HermitianOperator, SystemParams,
    TransmonParams, DEFAULT_LEVELS,
};
pub use spectrum::{eigendecompose, label_states, zz_rate, LabeledSpectrum};

/// Phase in radians accumulated by an ordinary frequency `f_mhz` over
/// `t_ns` nanoseconds.
pub fn phase_rad(f_mhz: f64, t_ns: f64) -> f64 {
    std::f64::consts::TAU * f_mhz * t_ns * 1e-3
}

/// Wrap a phase into (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut p = phi % tau;
    if p <= -std::f64::consts::PI {
        p += tau;
    } else if p > std::f64::consts::PI {
        p -= tau;
    }
    p
}
