//! Truncated bosonic operators and the driven two-transmon Hamiltonian.
//!
//! Each transmon is modeled as a Duffing oscillator truncated to a finite
//! number of levels. All frequencies and amplitudes are ordinary frequencies
//! in MHz (the `2π` never appears in stored quantities), so eigenvalue
//! differences of the constructed operators are directly in MHz. The
//! Hamiltonian is built in the frame of a drive at `drive_freq` and is
//! time-independent for constant amplitudes:
//!
//! ```text
//! H = Σ_i [ (ω_i − ω_d) n_i + (η_i/2) a_i†a_i†a_i a_i + ε_i a_i + ε_i* a_i† ]
//!     + J (a_c† a_t + a_c a_t†)
//! ```
//!
//! The tensor-product convention is control ⊗ target: basis index
//! `n_c * levels_t + n_t`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default per-transmon level truncation.
pub const DEFAULT_LEVELS: usize = 7;

/// Relative tolerance for the Hermiticity check on constructed operators.
pub const HERMITICITY_RTOL: f64 = 1e-12;

/// One transmon in the Duffing approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmonParams {
    /// |0⟩→|1⟩ transition frequency, MHz.
    pub freq_01: f64,
    /// Anharmonicity, MHz; negative for transmons.
    pub anharm: f64,
    /// Level truncation (≥ 3).
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_levels() -> usize {
    DEFAULT_LEVELS
}

impl TransmonParams {
    pub fn new(freq_01: f64, anharm: f64, levels: usize) -> Result<Self> {
        let t = Self {
            freq_01,
            anharm,
            levels,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 3 {
            return Err(Error::InvalidTruncation {
                levels: self.levels,
                min: 3,
            });
        }
        if !(self.anharm < 0.0) {
            return Err(Error::InvalidParam(format!(
                "anharm must be negative, got {}",
                self.anharm
            )));
        }
        if !(self.freq_01 > 0.0) {
            return Err(Error::InvalidParam(format!(
                "freq_01 must be positive, got {}",
                self.freq_01
            )));
        }
        Ok(())
    }

    /// Bare level energy n(ω−ω_d) + (η/2) n(n−1) in the drive frame, MHz.
    pub fn bare_energy(&self, n: usize, drive_freq: f64) -> f64 {
        let n = n as f64;
        n * (self.freq_01 - drive_freq) + 0.5 * self.anharm * n * (n - 1.0)
    }
}

/// Two coupled transmons. By convention the control is the higher-frequency
/// transmon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub control: TransmonParams,
    pub target: TransmonParams,
    /// Exchange coupling J, MHz (≥ 0).
    pub coupling_j: f64,
}

impl SystemParams {
    pub fn new(control: TransmonParams, target: TransmonParams, coupling_j: f64) -> Result<Self> {
        let s = Self {
            control,
            target,
            coupling_j,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.control.validate()?;
        self.target.validate()?;
        if self.control.freq_01 <= self.target.freq_01 {
            return Err(Error::InvalidParam(format!(
                "control frequency {} must exceed target frequency {}",
                self.control.freq_01, self.target.freq_01
            )));
        }
        if self.coupling_j < 0.0 {
            return Err(Error::InvalidParam(format!(
                "coupling_j must be >= 0, got {}",
                self.coupling_j
            )));
        }
        Ok(())
    }

    /// Control–target detuning Δ = ω_c − ω_t, MHz.
    pub fn detuning(&self) -> f64 {
        self.control.freq_01 - self.target.freq_01
    }

    /// Dimension of the tensor-product space.
    pub fn dim(&self) -> usize {
        self.control.levels * self.target.levels
    }

    /// Basis index of the bare product state |n_c, n_t⟩.
    pub fn basis_index(&self, n_c: usize, n_t: usize) -> usize {
        n_c * self.target.levels + n_t
    }
}

/// Constant complex drive amplitudes applied to each transmon, in the frame
/// of a common drive tone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Drive frequency ω_d, MHz.
    pub drive_freq: f64,
    /// Complex field amplitude on the control, MHz.
    pub eps_c: C64,
    /// Complex field amplitude on the target, MHz.
    pub eps_t: C64,
}

impl DriveConfig {
    pub fn new(drive_freq: f64, eps_c: C64, eps_t: C64) -> Result<Self> {
        let d = Self {
            drive_freq,
            eps_c,
            eps_t,
        };
        d.validate()?;
        Ok(d)
    }

    /// Drive with both amplitudes zero.
    pub fn idle(drive_freq: f64) -> Self {
        Self {
            drive_freq,
            eps_c: C64::new(0.0, 0.0),
            eps_t: C64::new(0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.drive_freq > 0.0) {
            return Err(Error::InvalidParam(format!(
                "drive_freq must be positive, got {}",
                self.drive_freq
            )));
        }
        if !self.eps_c.is_finite() || !self.eps_t.is_finite() {
            return Err(Error::InvalidParam(
                "drive amplitudes must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Detuning of the control from the drive, Δ_c = ω_c − ω_d.
    pub fn detuning_c(&self, sys: &SystemParams) -> f64 {
        sys.control.freq_01 - self.drive_freq
    }

    /// Detuning of the target from the drive, Δ_t = ω_t − ω_d.
    pub fn detuning_t(&self, sys: &SystemParams) -> f64 {
        sys.target.freq_01 - self.drive_freq
    }

    /// Relative drive phase φ = arg(ε_t) − arg(ε_c).
    pub fn relative_phase(&self) -> f64 {
        self.eps_t.arg() - self.eps_c.arg()
    }
}

/// A dense complex matrix checked to equal its conjugate transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    dim: usize,
    entries: DMatrix<C64>,
}

impl HermitianOperator {
    /// Validates Hermiticity to within [`HERMITICITY_RTOL`] relative to the
    /// largest entry magnitude.
    pub fn try_new(entries: DMatrix<C64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::InvalidParam(format!(
                "operator must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let dim = entries.nrows();
        let mut max_entry = 0.0_f64;
        let mut max_dev = 0.0_f64;
        for i in 0..dim {
            for j in 0..dim {
                max_entry = max_entry.max(entries[(i, j)].norm());
                let dev = (entries[(i, j)] - entries[(j, i)].conj()).norm();
                max_dev = max_dev.max(dev);
            }
        }
        if max_dev > HERMITICITY_RTOL * max_entry.max(1.0) {
            return Err(Error::NonHermitian {
                max_dev,
                tol: HERMITICITY_RTOL,
            });
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.entries
    }
}

/// Bosonic annihilation/creation pair truncated to `levels` states:
/// `a[n-1, n] = √n`.
pub fn ladder_operator(levels: usize) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    if levels < 2 {
        return Err(Error::InvalidTruncation { levels, min: 2 });
    }
    let mut a = DMatrix::<C64>::zeros(levels, levels);
    for n in 1..levels {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let a_dagger = a.adjoint();
    Ok((a, a_dagger))
}

fn kron_c(lhs: &DMatrix<C64>, rhs: &DMatrix<C64>) -> DMatrix<C64> {
    lhs.kronecker(rhs)
}

/// Drive-frame Hamiltonian with the drive amplitudes set to zero: bare
/// Duffing terms plus the exchange coupling.
pub fn bare_hamiltonian(sys: &SystemParams, drive_freq: f64) -> Result<DMatrix<C64>> {
    sys.validate()?;
    if !(drive_freq > 0.0) {
        return Err(Error::InvalidParam(format!(
            "drive_freq must be positive, got {drive_freq}"
        )));
    }
    let (lc, lt) = (sys.control.levels, sys.target.levels);
    let (a_c, ad_c) = ladder_operator(lc)?;
    let (a_t, ad_t) = ladder_operator(lt)?;
    let eye_c = DMatrix::<C64>::identity(lc, lc);
    let eye_t = DMatrix::<C64>::identity(lt, lt);

    let mut h = DMatrix::<C64>::zeros(sys.dim(), sys.dim());
    // Diagonal Duffing part, written directly from the closed form.
    for n_c in 0..lc {
        for n_t in 0..lt {
            let e = sys.control.bare_energy(n_c, drive_freq)
                + sys.target.bare_energy(n_t, drive_freq);
            let k = sys.basis_index(n_c, n_t);
            h[(k, k)] = C64::new(e, 0.0);
        }
    }
    // Exchange coupling J (a_c† a_t + a_c a_t†).
    let j = C64::new(sys.coupling_j, 0.0);
    h += (kron_c(&ad_c, &eye_t) * kron_c(&eye_c, &a_t)
        + kron_c(&a_c, &eye_t) * kron_c(&eye_c, &ad_t))
    .scale_complex(j);
    Ok(h)
}

/// Drive terms ε_c a_c + ε_c* a_c† + ε_t a_t + ε_t* a_t† on the product space.
pub fn drive_hamiltonian(sys: &SystemParams, drive: &DriveConfig) -> Result<DMatrix<C64>> {
    sys.validate()?;
    drive.validate()?;
    let (lc, lt) = (sys.control.levels, sys.target.levels);
    let (a_c, ad_c) = ladder_operator(lc)?;
    let (a_t, ad_t) = ladder_operator(lt)?;
    let eye_c = DMatrix::<C64>::identity(lc, lc);
    let eye_t = DMatrix::<C64>::identity(lt, lt);

    let mut h = DMatrix::<C64>::zeros(sys.dim(), sys.dim());
    h += kron_c(&a_c, &eye_t).scale_complex(drive.eps_c);
    h += kron_c(&ad_c, &eye_t).scale_complex(drive.eps_c.conj());
    h += kron_c(&eye_c, &a_t).scale_complex(drive.eps_t);
    h += kron_c(&eye_c, &ad_t).scale_complex(drive.eps_t.conj());
    Ok(h)
}

/// Full driven two-transmon Hamiltonian in the drive frame, H/2π in MHz.
pub fn build_hamiltonian(sys: &SystemParams, drive: &DriveConfig) -> Result<HermitianOperator> {
    let h = bare_hamiltonian(sys, drive.drive_freq)? + drive_hamiltonian(sys, drive)?;
    HermitianOperator::try_new(h)
}

trait ScaleComplex {
    fn scale_complex(self, factor: C64) -> Self;
}

impl ScaleComplex for DMatrix<C64> {
    fn scale_complex(mut self, factor: C64) -> Self {
        self.iter_mut().for_each(|v| *v *= factor);
        self
    }
}
