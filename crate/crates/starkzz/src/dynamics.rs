//! Shaped-pulse unitary dynamics and gate calibration.
//!
//! Pulses are cosine-ramped flat-top envelopes scaling the constant-drive
//! Hamiltonian's field amplitudes. Time evolution uses piecewise-constant
//! matrix-exponential steps with the envelope sampled at each step midpoint;
//! every step operator comes from a Hermitian eigendecomposition and is
//! unitary to machine precision.
//!
//! Bloch vectors are reported in each qubit's own bare rotating frame (the
//! (ω_i − ω_d)·t phases are removed analytically after the pulse), so idle
//! qubits have stationary Bloch vectors and Ramsey slopes measure only
//! drive- and coupling-induced shifts.

use nalgebra::{DMatrix, DVector, Matrix4};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crosstalk::{apply_crosstalk, fmt_sig, CrosstalkMatrix};
use crate::error::{Error, Result};
use crate::fit::fit_cosine;
use crate::hamiltonian::{bare_hamiltonian, drive_hamiltonian, DriveConfig, SystemParams};
use crate::spectrum::eigh;
use crate::{phase_rad, wrap_phase};

/// Cosine-ramped flat-top pulse envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub total_ns: f64,
    /// Fraction of the total duration spent on the flat top, in [0, 1].
    pub flat_fraction: f64,
}

/// Default flat-top fraction of the pulse duration.
pub const DEFAULT_FLAT_FRACTION: f64 = 0.4;

impl PulseShape {
    pub fn new(total_ns: f64, flat_fraction: f64) -> Result<Self> {
        if !(total_ns > 0.0) {
            return Err(Error::InvalidParam(format!(
                "pulse duration must be positive, got {total_ns}"
            )));
        }
        if !(0.0..=1.0).contains(&flat_fraction) {
            return Err(Error::InvalidParam(format!(
                "flat_fraction must be in [0, 1], got {flat_fraction}"
            )));
        }
        Ok(Self {
            total_ns,
            flat_fraction,
        })
    }

    /// Rectangular segment (no ramps); used for constant-amplitude drives.
    pub fn constant(total_ns: f64) -> Result<Self> {
        Self::new(total_ns, 1.0)
    }

    /// Duration of each cosine ramp, ns.
    pub fn ramp_ns(&self) -> f64 {
        0.5 * self.total_ns * (1.0 - self.flat_fraction)
    }

    /// Envelope value in [0, 1]; zero outside the pulse.
    pub fn envelope(&self, t_ns: f64) -> f64 {
        if t_ns < 0.0 || t_ns > self.total_ns {
            return 0.0;
        }
        let ramp = self.ramp_ns();
        if ramp > 0.0 {
            if t_ns < ramp {
                return 0.5 * (1.0 - (std::f64::consts::PI * t_ns / ramp).cos());
            }
            if t_ns > self.total_ns - ramp {
                return 0.5
                    * (1.0 - (std::f64::consts::PI * (self.total_ns - t_ns) / ramp).cos());
            }
        }
        1.0
    }
}

/// Free-function form of [`PulseShape::envelope`].
pub fn envelope(shape: &PulseShape, t_ns: f64) -> f64 {
    shape.envelope(t_ns)
}

/// A shaped pulse: peak drive amplitudes plus the envelope that scales them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsedDrive {
    pub drive: DriveConfig,
    pub shape: PulseShape,
}

impl PulsedDrive {
    pub fn new(drive: DriveConfig, shape: PulseShape) -> Self {
        Self { drive, shape }
    }

    /// Constant-amplitude segment of the given duration.
    pub fn constant(drive: DriveConfig, total_ns: f64) -> Result<Self> {
        Ok(Self {
            drive,
            shape: PulseShape::constant(total_ns)?,
        })
    }
}

/// Target- or control-qubit reduced Bloch vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let r = Self { x, y, z };
        if r.norm() > 1.0 + 1e-9 {
            return Err(Error::InvalidParam(format!(
                "Bloch vector norm {} exceeds 1",
                r.norm()
            )));
        }
        Ok(r)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Azimuthal (equatorial) phase arg(x + iy).
    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

/// R = ‖r₀ − r₁‖²/2; ranges over [0, 2] and reaches 2 for antipodal pure
/// states.
pub fn r_metric(r0: &BlochVector, r1: &BlochVector) -> f64 {
    let dx = r0.x - r1.x;
    let dy = r0.y - r1.y;
    let dz = r0.z - r1.z;
    0.5 * (dx * dx + dy * dy + dz * dz)
}

fn step_count(total_ns: f64, step_ns: f64) -> Result<usize> {
    if !(step_ns > 0.0) {
        return Err(Error::InvalidParam(format!(
            "step must be positive, got {step_ns}"
        )));
    }
    if step_ns > total_ns / 10.0 {
        return Err(Error::StepTooCoarse {
            step_ns,
            max_ns: total_ns / 10.0,
        });
    }
    Ok((total_ns / step_ns).ceil() as usize)
}

/// Step operator exp(−i 2π H dt) from a Hermitian eigendecomposition.
fn step_operator(h: &DMatrix<C64>, dt_ns: f64) -> DMatrix<C64> {
    let eig = eigh(h);
    let n = eig.dim();
    let mut scaled = eig.vectors().clone();
    for k in 0..n {
        let phase = C64::from_polar(1.0, -phase_rad(eig.values()[k], dt_ns));
        scaled.column_mut(k).iter_mut().for_each(|v| *v *= phase);
    }
    scaled * eig.vectors().adjoint()
}

/// Full pulse propagator in the drive frame.
///
/// The midpoint envelope sequence of a symmetric pulse mirrors about the
/// pulse center, so only the first half of the step operators is computed;
/// the second half is the same product in reversed order.
pub fn propagate_unitary(
    sys: &SystemParams,
    pulsed: &PulsedDrive,
    step_ns: f64,
) -> Result<DMatrix<C64>> {
    sys.validate()?;
    pulsed.drive.validate()?;
    let n = step_count(pulsed.shape.total_ns, step_ns)?;
    let dt = pulsed.shape.total_ns / n as f64;
    let h0 = bare_hamiltonian(sys, pulsed.drive.drive_freq)?;
    let hd = drive_hamiltonian(sys, &pulsed.drive)?;
    let dim = sys.dim();

    let mut fwd = DMatrix::<C64>::identity(dim, dim); // time-ordered product
    let mut rev = DMatrix::<C64>::identity(dim, dim); // reverse-ordered product
    let mut flat_op: Option<DMatrix<C64>> = None;
    let half = n / 2;
    for k in 0..half {
        let t_mid = (k as f64 + 0.5) * dt;
        let env = pulsed.shape.envelope(t_mid);
        let op = if env == 1.0 {
            flat_op
                .get_or_insert_with(|| step_operator(&(&h0 + &hd), dt))
                .clone()
        } else {
            step_operator(&(&h0 + scale(&hd, env)), dt)
        };
        fwd = &op * fwd;
        rev *= &op;
    }
    let u = if n % 2 == 1 {
        let t_mid = (half as f64 + 0.5) * dt;
        let env = pulsed.shape.envelope(t_mid);
        let mid = step_operator(&(&h0 + scale(&hd, env)), dt);
        rev * mid * fwd
    } else {
        rev * fwd
    };
    Ok(u)
}

fn scale(m: &DMatrix<C64>, factor: f64) -> DMatrix<C64> {
    m.map(|v| v * factor)
}

/// Final state after the pulse: the propagator applied to `psi0`.
pub fn propagate(
    sys: &SystemParams,
    pulsed: &PulsedDrive,
    psi0: &DVector<C64>,
    step_ns: f64,
) -> Result<DVector<C64>> {
    if psi0.len() != sys.dim() {
        return Err(Error::InvalidParam(format!(
            "state dim {} does not match system dim {}",
            psi0.len(),
            sys.dim()
        )));
    }
    Ok(propagate_unitary(sys, pulsed, step_ns)? * psi0)
}

/// State trajectory sampled every `sample_every` steps (plus the endpoint).
pub fn propagate_trajectory(
    sys: &SystemParams,
    pulsed: &PulsedDrive,
    psi0: &DVector<C64>,
    step_ns: f64,
    sample_every: usize,
) -> Result<Vec<(f64, DVector<C64>)>> {
    sys.validate()?;
    pulsed.drive.validate()?;
    if psi0.len() != sys.dim() {
        return Err(Error::InvalidParam(format!(
            "state dim {} does not match system dim {}",
            psi0.len(),
            sys.dim()
        )));
    }
    let n = step_count(pulsed.shape.total_ns, step_ns)?;
    let dt = pulsed.shape.total_ns / n as f64;
    let h0 = bare_hamiltonian(sys, pulsed.drive.drive_freq)?;
    let hd = drive_hamiltonian(sys, &pulsed.drive)?;
    let every = sample_every.max(1);
    let mut psi = psi0.clone();
    let mut out = vec![(0.0, psi.clone())];
    let mut flat_op: Option<DMatrix<C64>> = None;
    for k in 0..n {
        let t_mid = (k as f64 + 0.5) * dt;
        let env = pulsed.shape.envelope(t_mid);
        if env == 1.0 {
            let op = flat_op.get_or_insert_with(|| step_operator(&(&h0 + &hd), dt));
            psi = &*op * psi;
        } else {
            psi = step_operator(&(&h0 + scale(&hd, env)), dt) * psi;
        }
        if (k + 1) % every == 0 || k + 1 == n {
            out.push(((k + 1) as f64 * dt, psi.clone()));
        }
    }
    Ok(out)
}

/// Diagonal phases restoring each qubit's bare rotating frame at time
/// `t_ns`: basis state |n_c, n_t⟩ gains e^{+i 2π (Δ_c n_c + Δ_t n_t) t}.
pub fn frame_correction(sys: &SystemParams, drive_freq: f64, t_ns: f64) -> DVector<C64> {
    let det_c = sys.control.freq_01 - drive_freq;
    let det_t = sys.target.freq_01 - drive_freq;
    let mut d = DVector::<C64>::zeros(sys.dim());
    for n_c in 0..sys.control.levels {
        for n_t in 0..sys.target.levels {
            let phase = phase_rad(det_c * n_c as f64 + det_t * n_t as f64, t_ns);
            d[sys.basis_index(n_c, n_t)] = C64::from_polar(1.0, phase);
        }
    }
    d
}

/// A computed pulse propagator together with the context needed to read
/// qubit observables out of it.
#[derive(Debug, Clone)]
pub struct PulseUnitary {
    u: DMatrix<C64>,
    sys: SystemParams,
    drive_freq: f64,
    total_ns: f64,
}

/// Which qubit an observable refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Qubit {
    Control,
    Target,
}

impl PulseUnitary {
    pub fn compute(sys: &SystemParams, pulsed: &PulsedDrive, step_ns: f64) -> Result<Self> {
        Ok(Self {
            u: propagate_unitary(sys, pulsed, step_ns)?,
            sys: *sys,
            drive_freq: pulsed.drive.drive_freq,
            total_ns: pulsed.shape.total_ns,
        })
    }

    /// Raw drive-frame propagator.
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.u
    }

    fn frame(&self) -> DVector<C64> {
        frame_correction(&self.sys, self.drive_freq, self.total_ns)
    }

    /// Frame-corrected computational block, ordered |00⟩, |01⟩, |10⟩, |11⟩
    /// (control major).
    pub fn computational_block(&self) -> Matrix4<C64> {
        let frame = self.frame();
        let idx = [
            self.sys.basis_index(0, 0),
            self.sys.basis_index(0, 1),
            self.sys.basis_index(1, 0),
            self.sys.basis_index(1, 1),
        ];
        Matrix4::from_fn(|i, j| frame[idx[i]] * self.u[(idx[i], idx[j])])
    }

    fn evolve_from(&self, entries: &[(usize, C64)]) -> DVector<C64> {
        let mut psi0 = DVector::<C64>::zeros(self.sys.dim());
        for &(k, a) in entries {
            psi0[k] = a;
        }
        let frame = self.frame();
        let mut psi = &self.u * psi0;
        psi.iter_mut().zip(frame.iter()).for_each(|(p, f)| *p *= f);
        psi
    }

    /// Reduced Bloch vector of the target after the pulse, control prepared
    /// in |n⟩ and target on the equator. Traces over every control level and
    /// drops the target's non-computational levels without renormalizing, so
    /// leakage shows up as ‖r‖ < 1.
    pub fn conditional_bloch(&self, control_state: usize) -> Result<BlochVector> {
        if control_state >= self.sys.control.levels {
            return Err(Error::InvalidParam(format!(
                "control state {} outside truncation {}",
                control_state, self.sys.control.levels
            )));
        }
        let amp = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let psi = self.evolve_from(&[
            (self.sys.basis_index(control_state, 0), amp),
            (self.sys.basis_index(control_state, 1), amp),
        ]);
        let mut rho00 = 0.0;
        let mut rho11 = 0.0;
        let mut rho01 = C64::new(0.0, 0.0);
        for m_c in 0..self.sys.control.levels {
            let a0 = psi[self.sys.basis_index(m_c, 0)];
            let a1 = psi[self.sys.basis_index(m_c, 1)];
            rho00 += a0.norm_sqr();
            rho11 += a1.norm_sqr();
            rho01 += a0 * a1.conj();
        }
        BlochVector::new(2.0 * rho01.re, -2.0 * rho01.im, rho00 - rho11)
    }

    /// x-basis expectation of the measured qubit versus an applied virtual-Z
    /// angle, for the spectator qubit prepared in |0⟩ and |1⟩. The measured
    /// qubit starts at |+⟩.
    pub fn phase_curves(&self, measured: Qubit, vz_angles: &[f64]) -> Result<[PhaseCurve; 2]> {
        let amp = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let mut curves = Vec::with_capacity(2);
        for spectator_state in [0usize, 1] {
            let (i0, i1) = match measured {
                Qubit::Control => (
                    self.sys.basis_index(0, spectator_state),
                    self.sys.basis_index(1, spectator_state),
                ),
                Qubit::Target => (
                    self.sys.basis_index(spectator_state, 0),
                    self.sys.basis_index(spectator_state, 1),
                ),
            };
            let psi = self.evolve_from(&[(i0, amp), (i1, amp)]);
            // reduced coherence of the measured qubit, traced over the other
            let mut rho01 = C64::new(0.0, 0.0);
            match measured {
                Qubit::Control => {
                    for m in 0..self.sys.target.levels {
                        rho01 += psi[self.sys.basis_index(0, m)]
                            * psi[self.sys.basis_index(1, m)].conj();
                    }
                }
                Qubit::Target => {
                    for m in 0..self.sys.control.levels {
                        rho01 += psi[self.sys.basis_index(m, 0)]
                            * psi[self.sys.basis_index(m, 1)].conj();
                    }
                }
            }
            let values = vz_angles
                .iter()
                .map(|&phi| 2.0 * (rho01 * C64::from_polar(1.0, -phi)).re)
                .collect();
            curves.push(PhaseCurve {
                vz_angles: vz_angles.to_vec(),
                values,
            });
        }
        let second = curves.pop().unwrap();
        let first = curves.pop().unwrap();
        Ok([first, second])
    }
}

/// Conditional target Bloch vector after a shaped pulse.
pub fn conditional_bloch(
    sys: &SystemParams,
    pulsed: &PulsedDrive,
    control_state: usize,
    step_ns: f64,
) -> Result<BlochVector> {
    PulseUnitary::compute(sys, pulsed, step_ns)?.conditional_bloch(control_state)
}

/// Measured x-basis expectation of one qubit versus applied virtual-Z angle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseCurve {
    pub vz_angles: Vec<f64>,
    pub values: Vec<f64>,
}

/// Virtual-Z correction angle from a pair of phase-sweep curves (spectator
/// in |0⟩ and |1⟩).
///
/// Each curve is fit to c·cos(φ + φ₀) + d. The convention maps
/// |+, 0⟩ → |0, 0⟩ and |+, 1⟩ → |1, 1⟩: the |0⟩ curve wants its maximum at
/// the applied angle, the |1⟩ curve its minimum; the two resulting
/// candidates are circularly averaged.
pub fn calibrate_local_z(curve_s0: &PhaseCurve, curve_s1: &PhaseCurve) -> Result<f64> {
    let mut candidates = [0.0_f64; 2];
    for (k, curve) in [curve_s0, curve_s1].into_iter().enumerate() {
        if curve.vz_angles.len() < 16 || curve.vz_angles.len() != curve.values.len() {
            return Err(Error::InsufficientData(format!(
                "phase curve needs >= 16 points, got {}",
                curve.vz_angles.len()
            )));
        }
        let span = curve
            .vz_angles
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if span.1 - span.0 < 0.9 * std::f64::consts::TAU {
            return Err(Error::InsufficientData(format!(
                "phase curve spans {:.3} rad, below one period",
                span.1 - span.0
            )));
        }
        let (c, phi0, _) = fit_cosine(&curve.vz_angles, &curve.values)?;
        if c < 0.1 {
            return Err(Error::LowContrast { contrast: c });
        }
        candidates[k] = if k == 0 {
            -phi0
        } else {
            std::f64::consts::PI - phi0
        };
    }
    let mean = C64::from_polar(1.0, candidates[0]) + C64::from_polar(1.0, candidates[1]);
    Ok(wrap_phase(mean.arg()))
}

/// Simulated Ramsey trace: per-control-state equatorial phases of the target
/// on the supplied time grid, in the target's bare frame.
#[derive(Debug, Clone)]
pub struct RamseyTrace {
    pub times_ns: Vec<f64>,
    /// Unwrapped target phase with the control in |0⟩, rad.
    pub phase0_rad: Vec<f64>,
    /// Unwrapped target phase with the control in |1⟩, rad.
    pub phase1_rad: Vec<f64>,
    /// Extracted ZZ rate, MHz.
    pub zeta_mhz: f64,
}

fn unwrap_phases(raw: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(raw.len());
    for (k, &p) in raw.iter().enumerate() {
        if k == 0 {
            out.push(p);
            continue;
        }
        let prev = out[k - 1];
        let mut cur = p;
        while cur - prev > std::f64::consts::PI {
            cur -= std::f64::consts::TAU;
        }
        while cur - prev < -std::f64::consts::PI {
            cur += std::f64::consts::TAU;
        }
        out.push(cur);
    }
    out
}

fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Ramsey-style ZZ extraction under a constant drive.
///
/// Prepares the target on the equator for the control in |0⟩ and |1⟩,
/// records the unwrapped equatorial phase on the time grid, fits each phase
/// linearly, and converts the slope difference to MHz. The grid must resolve
/// the per-state phase slopes and should span at least two periods of the
/// expected shift; undersampling is detected by comparing against a
/// 2×-decimated fit and reported as [`Error::Aliasing`].
pub fn ramsey_trace(
    sys: &SystemParams,
    drive: &DriveConfig,
    times_ns: &[f64],
) -> Result<RamseyTrace> {
    sys.validate()?;
    drive.validate()?;
    if times_ns.len() < 32 {
        return Err(Error::InsufficientData(format!(
            "ramsey grid needs >= 32 points, got {}",
            times_ns.len()
        )));
    }
    if times_ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParam(
            "ramsey time grid must be strictly increasing".into(),
        ));
    }
    let h = bare_hamiltonian(sys, drive.drive_freq)? + drive_hamiltonian(sys, drive)?;
    let eig = eigh(&h);
    let det_t = sys.target.freq_01 - drive.drive_freq;
    let amp = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);

    let mut phases: Vec<Vec<f64>> = Vec::with_capacity(2);
    for control_state in [0usize, 1] {
        let mut psi0 = DVector::<C64>::zeros(sys.dim());
        psi0[sys.basis_index(control_state, 0)] = amp;
        psi0[sys.basis_index(control_state, 1)] = amp;
        let coeffs = eig.vectors().adjoint() * &psi0;
        let raw: Vec<f64> = times_ns
            .iter()
            .map(|&t| {
                let mut evolved = coeffs.clone();
                for (k, c) in evolved.iter_mut().enumerate() {
                    *c *= C64::from_polar(1.0, -phase_rad(eig.values()[k], t));
                }
                let psi = eig.vectors() * evolved;
                let mut rho10 = C64::new(0.0, 0.0);
                for m_c in 0..sys.control.levels {
                    rho10 +=
                        psi[sys.basis_index(m_c, 1)] * psi[sys.basis_index(m_c, 0)].conj();
                }
                // equatorial phase arg(⟨x⟩ + i⟨y⟩), moved to the target's bare frame
                wrap_phase(rho10.arg() + phase_rad(det_t, t))
            })
            .collect();
        phases.push(unwrap_phases(&raw));
    }

    let to_mhz = 1.0 / (std::f64::consts::TAU * 1e-3);
    let mut slopes = [0.0_f64; 2];
    for (k, ph) in phases.iter().enumerate() {
        let full = linear_slope(times_ns, ph);
        // an aliased uniform-grid tone unwraps to a perfectly straight wrong
        // line; decimating changes the alias and exposes the disagreement
        let dec_t: Vec<f64> = times_ns.iter().copied().step_by(2).collect();
        let dec_raw: Vec<f64> = ph.iter().map(|&p| wrap_phase(p)).step_by(2).collect();
        let decimated = linear_slope(&dec_t, &unwrap_phases(&dec_raw));
        let (f_full, f_dec) = (full * to_mhz, decimated * to_mhz);
        if (f_full - f_dec).abs() > (0.01 * f_full.abs()).max(1e-3) {
            return Err(Error::Aliasing {
                slope_full: f_full,
                slope_decimated: f_dec,
            });
        }
        slopes[k] = full;
    }
    let zeta_mhz = (slopes[0] - slopes[1]) * to_mhz;
    let phase1 = phases.pop().unwrap();
    let phase0 = phases.pop().unwrap();
    Ok(RamseyTrace {
        times_ns: times_ns.to_vec(),
        phase0_rad: phase0,
        phase1_rad: phase1,
        zeta_mhz,
    })
}

/// ZZ rate from simulated Ramsey interferometry, MHz.
pub fn ramsey_zz(sys: &SystemParams, drive: &DriveConfig, times_ns: &[f64]) -> Result<f64> {
    Ok(ramsey_trace(sys, drive, times_ns)?.zeta_mhz)
}

/// Pulse context for an R-metric sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RSweepSettings {
    pub crosstalk: CrosstalkMatrix,
    /// MHz of field per device unit of line amplitude.
    pub scale: f64,
    /// Relative line phase between the two drives.
    pub phi_d: f64,
    pub shape: PulseShape,
    pub step_ns: f64,
}

/// One cell of the R map.
#[derive(Debug, Clone, Serialize)]
pub struct RCell {
    pub amp: f64,
    pub drive_freq_mhz: f64,
    pub r: f64,
    pub r0: BlochVector,
    pub r1: BlochVector,
    /// Per-point failure, recorded instead of aborting the sweep.
    pub flag: Option<String>,
}

/// R over an (amplitude × drive-frequency) grid, row-major in amplitude.
#[derive(Debug, Clone)]
pub struct RMap {
    pub amplitudes: Vec<f64>,
    pub drive_freqs_mhz: Vec<f64>,
    pub cells: Vec<RCell>,
}

impl RMap {
    pub fn cell(&self, amp_idx: usize, freq_idx: usize) -> &RCell {
        &self.cells[amp_idx * self.drive_freqs_mhz.len() + freq_idx]
    }

    /// Emit as CSV: `a,freq_mhz,r_value` (flagged cells carry NaN).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "a,freq_mhz,r_value")?;
        for cell in &self.cells {
            writeln!(
                w,
                "{},{},{}",
                fmt_sig(cell.amp),
                fmt_sig(cell.drive_freq_mhz),
                if cell.flag.is_some() {
                    "nan".to_string()
                } else {
                    fmt_sig(cell.r)
                }
            )?;
        }
        Ok(())
    }

    pub fn flag_count(&self) -> usize {
        self.cells.iter().filter(|c| c.flag.is_some()).count()
    }
}

fn r_point(
    sys: &SystemParams,
    settings: &RSweepSettings,
    amp: f64,
    drive_freq: f64,
) -> Result<(BlochVector, BlochVector, f64)> {
    let (eps_c, eps_t) = apply_crosstalk(
        &settings.crosstalk,
        amp,
        amp,
        settings.phi_d,
        settings.scale,
    )?;
    let drive = DriveConfig::new(drive_freq, eps_c, eps_t)?;
    let pu = PulseUnitary::compute(
        sys,
        &PulsedDrive::new(drive, settings.shape),
        settings.step_ns,
    )?;
    let r0 = pu.conditional_bloch(0)?;
    let r1 = pu.conditional_bloch(1)?;
    let r = r_metric(&r0, &r1);
    Ok((r0, r1, r))
}

/// Sweep R over global amplitude and drive frequency. Per-point errors are
/// recorded as flagged cells; the sweep always completes.
pub fn sweep_r(
    sys: &SystemParams,
    settings: &RSweepSettings,
    amplitudes: &[f64],
    drive_freqs_mhz: &[f64],
) -> Result<RMap> {
    sys.validate()?;
    if amplitudes.is_empty() || drive_freqs_mhz.is_empty() {
        return Err(Error::InvalidParam("empty R-sweep grid".into()));
    }
    let grid: Vec<(f64, f64)> = amplitudes
        .iter()
        .flat_map(|&a| drive_freqs_mhz.iter().map(move |&f| (a, f)))
        .collect();
    let cells: Vec<RCell> = grid
        .par_iter()
        .map(|&(amp, freq)| match r_point(sys, settings, amp, freq) {
            Ok((r0, r1, r)) => RCell {
                amp,
                drive_freq_mhz: freq,
                r,
                r0,
                r1,
                flag: None,
            },
            Err(e) => RCell {
                amp,
                drive_freq_mhz: freq,
                r: f64::NAN,
                r0: BlochVector {
                    x: 0.0,
                    y: 0.0,
                    z: 0.0,
                },
                r1: BlochVector {
                    x: 0.0,
                    y: 0.0,
                    z: 0.0,
                },
                flag: Some(e.to_string()),
            },
        })
        .collect();
    Ok(RMap {
        amplitudes: amplitudes.to_vec(),
        drive_freqs_mhz: drive_freqs_mhz.to_vec(),
        cells,
    })
}

/// Conditional phase between the two target Bloch vectors, wrapped.
fn conditional_phase(r0: &BlochVector, r1: &BlochVector) -> f64 {
    wrap_phase(r1.azimuth() - r0.azimuth())
}

/// Result of the full CZ calibration pass.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub r_map: RMap,
    /// Grid point with the largest R.
    pub best_amp: f64,
    pub best_freq_mhz: f64,
    pub best_r: f64,
    /// Widest contiguous drive-frequency span whose best-over-amplitude R
    /// reaches the band threshold, MHz.
    pub band_mhz: f64,
    pub band_threshold: f64,
    /// Amplitude refined so the conditional phase reaches π.
    pub refined_amp: f64,
    pub conditional_phase_rad: f64,
    pub phi_zi_rad: f64,
    pub phi_iz_rad: f64,
    /// Average gate fidelity of the compiled gate against CZ = diag(1,1,1,−1).
    pub gate_fidelity: f64,
    pub compiled_gate: Matrix4<C64>,
}

/// Average gate fidelity between a (possibly subunitary) 4×4 operator and a
/// target unitary, insensitive to global phase.
pub fn average_gate_fidelity(gate: &Matrix4<C64>, target: &Matrix4<C64>) -> f64 {
    let m = target.adjoint() * gate;
    let d = 4.0;
    let tr: C64 = (0..4).map(|i| m[(i, i)]).sum();
    let frob: f64 = m.iter().map(|v| v.norm_sqr()).sum();
    (tr.norm_sqr() + frob) / (d * (d + 1.0))
}

/// The ideal CZ unitary diag(1, 1, 1, −1).
pub fn cz_target() -> Matrix4<C64> {
    Matrix4::from_diagonal(&nalgebra::Vector4::new(
        C64::new(1.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(-1.0, 0.0),
    ))
}

/// Settings for [`calibrate_cz`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub sweep: RSweepSettings,
    /// Step used for the final fine-step unitary and phase curves.
    pub fine_step_ns: f64,
    /// Minimum usable grid maximum; below this the calibration aborts.
    pub required_r: f64,
    /// Threshold defining the usable frequency band.
    pub band_r: f64,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Calibrate a CZ gate: sweep R, pick its maximum, refine the amplitude by
/// golden-section search on the conditional phase reaching π, then fix the
/// local phases with virtual-Z corrections and score the compiled gate
/// against the ideal CZ.
pub fn calibrate_cz(
    sys: &SystemParams,
    settings: &CalibrationSettings,
    amplitudes: &[f64],
    drive_freqs_mhz: &[f64],
) -> Result<CalibrationReport> {
    let r_map = sweep_r(sys, &settings.sweep, amplitudes, drive_freqs_mhz)?;
    let best = r_map
        .cells
        .iter()
        .filter(|c| c.flag.is_none() && c.r.is_finite())
        .max_by(|a, b| a.r.partial_cmp(&b.r).unwrap())
        .ok_or_else(|| Error::InvalidParam("all R-sweep cells flagged".into()))?;
    if best.r < settings.required_r {
        return Err(Error::CalibrationFailure {
            best_r: best.r,
            required: settings.required_r,
        });
    }
    let (best_amp, best_freq, best_r) = (best.amp, best.drive_freq_mhz, best.r);

    // widest contiguous frequency band where max-over-amplitude R clears the
    // band threshold
    let n_f = drive_freqs_mhz.len();
    let col_max: Vec<f64> = (0..n_f)
        .map(|j| {
            (0..amplitudes.len())
                .map(|i| r_map.cell(i, j))
                .filter(|c| c.flag.is_none() && c.r.is_finite())
                .map(|c| c.r)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mut band_mhz = 0.0_f64;
    let mut run_start: Option<usize> = None;
    for j in 0..=n_f {
        let ok = j < n_f && col_max[j] >= settings.band_r;
        match (ok, run_start) {
            (true, None) => run_start = Some(j),
            (false, Some(s)) => {
                band_mhz = band_mhz.max((drive_freqs_mhz[j - 1] - drive_freqs_mhz[s]).abs());
                run_start = None;
            }
            _ => {}
        }
    }

    // golden-section refinement of the amplitude: minimize π − |δφ(A)|
    let gap = |amp: f64| -> Result<f64> {
        let (r0, r1, _) = r_point(sys, &settings.sweep, amp, best_freq)?;
        Ok(std::f64::consts::PI - conditional_phase(&r0, &r1).abs())
    };
    let (mut lo, mut hi) = (0.75 * best_amp, 1.3 * best_amp);
    let mut a = hi - GOLDEN * (hi - lo);
    let mut b = lo + GOLDEN * (hi - lo);
    let mut fa = gap(a)?;
    let mut fb = gap(b)?;
    for _ in 0..36 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - GOLDEN * (hi - lo);
            fa = gap(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + GOLDEN * (hi - lo);
            fb = gap(b)?;
        }
    }
    let refined_amp = 0.5 * (lo + hi);

    // fine-step unitary at the refined point
    let (eps_c, eps_t) = apply_crosstalk(
        &settings.sweep.crosstalk,
        refined_amp,
        refined_amp,
        settings.sweep.phi_d,
        settings.sweep.scale,
    )?;
    let drive = DriveConfig::new(best_freq, eps_c, eps_t)?;
    let pu = PulseUnitary::compute(
        sys,
        &PulsedDrive::new(drive, settings.sweep.shape),
        settings.fine_step_ns,
    )?;
    let r0 = pu.conditional_bloch(0)?;
    let r1 = pu.conditional_bloch(1)?;
    let conditional_phase_rad = conditional_phase(&r0, &r1);

    let vz_grid: Vec<f64> = (0..24)
        .map(|k| std::f64::consts::TAU * k as f64 / 24.0)
        .collect();
    let [zi0, zi1] = pu.phase_curves(Qubit::Control, &vz_grid)?;
    let phi_zi = calibrate_local_z(&zi0, &zi1)?;
    let [iz0, iz1] = pu.phase_curves(Qubit::Target, &vz_grid)?;
    let phi_iz = calibrate_local_z(&iz0, &iz1)?;

    let vz = Matrix4::from_diagonal(&nalgebra::Vector4::new(
        C64::new(1.0, 0.0),
        C64::from_polar(1.0, phi_iz),
        C64::from_polar(1.0, phi_zi),
        C64::from_polar(1.0, phi_zi + phi_iz),
    ));
    let compiled_gate = vz * pu.computational_block();
    let gate_fidelity = average_gate_fidelity(&compiled_gate, &cz_target());

    Ok(CalibrationReport {
        r_map,
        best_amp,
        best_freq_mhz: best_freq,
        best_r,
        band_mhz,
        band_threshold: settings.band_r,
        refined_amp,
        conditional_phase_rad,
        phi_zi_rad: phi_zi,
        phi_iz_rad: phi_iz,
        gate_fidelity,
        compiled_gate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{pair1, pair2};

    fn shape201() -> PulseShape {
        PulseShape::new(201.0, DEFAULT_FLAT_FRACTION).unwrap()
    }

    #[test]
    fn envelope_flat_top_and_edges() {
        let s = shape201();
        assert_eq!(s.envelope(100.5), 1.0);
        assert!(s.envelope(0.0).abs() < 1e-15);
        assert!(s.envelope(201.0).abs() < 1e-15);
        assert_eq!(s.envelope(-1.0), 0.0);
        assert_eq!(s.envelope(202.0), 0.0);
        // flat region is exactly [60.3, 140.7] for a 201 ns pulse at 40%
        assert!((s.ramp_ns() - 60.3).abs() < 1e-12);
        assert!(s.envelope(60.3) > 1.0 - 1e-12);
        assert!(s.envelope(140.7) > 1.0 - 1e-12);
        assert!(s.envelope(60.0) < 1.0);
        assert!(s.envelope(141.0) < 1.0);
    }

    #[test]
    fn envelope_integral_matches_closed_form() {
        let s = shape201();
        let n = 20000;
        let h = s.total_ns / n as f64;
        let mut acc = s.envelope(0.0) + s.envelope(s.total_ns);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * s.envelope(k as f64 * h);
        }
        let integral = acc * h / 3.0;
        let expect = s.total_ns * (s.flat_fraction + 0.5 * (1.0 - s.flat_fraction));
        assert!(
            ((integral - expect) / expect).abs() < 1e-9,
            "{integral} vs {expect}"
        );
    }

    #[test]
    fn envelope_derivative_continuous_at_joins() {
        let s = shape201();
        let d = 1e-6;
        for t in [s.ramp_ns(), s.total_ns - s.ramp_ns()] {
            let left = (s.envelope(t) - s.envelope(t - d)) / d;
            let right = (s.envelope(t + d) - s.envelope(t)) / d;
            assert!((left - right).abs() < 1e-4, "kink at {t}: {left} vs {right}");
        }
    }

    fn pulse(sys: &SystemParams, amp: f64, phi: f64, det: f64) -> PulsedDrive {
        let drive = DriveConfig::new(
            sys.target.freq_01 + det,
            C64::from_polar(amp, 0.0),
            C64::from_polar(amp, phi),
        )
        .unwrap();
        PulsedDrive::new(drive, shape201())
    }

    #[test]
    fn propagator_is_unitary() {
        let sys = pair2();
        let p = pulse(&sys, 25.0, std::f64::consts::PI, -40.0);
        let u = propagate_unitary(&sys, &p, 0.05).unwrap();
        let dev = (u.adjoint() * &u - DMatrix::<C64>::identity(sys.dim(), sys.dim()))
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-9, "unitarity deviation {dev:e}");
    }

    #[test]
    fn idle_eigenstate_gains_only_phase() {
        let mut sys = pair1();
        sys.coupling_j = 0.0;
        let drive = DriveConfig::idle(sys.target.freq_01 - 40.0);
        let p = PulsedDrive::constant(drive, 120.0).unwrap();
        let mut psi0 = DVector::<C64>::zeros(sys.dim());
        psi0[sys.basis_index(1, 1)] = C64::new(1.0, 0.0);
        let psi = propagate(&sys, &p, &psi0, 0.5).unwrap();
        let e = sys.control.bare_energy(1, drive.drive_freq)
            + sys.target.bare_energy(1, drive.drive_freq);
        let expect = C64::from_polar(1.0, -phase_rad(e, 120.0));
        let fidelity = (psi[sys.basis_index(1, 1)] * expect.conj()).re;
        assert!(fidelity > 1.0 - 1e-10, "fidelity {fidelity}");
        assert!((psi.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn step_halving_is_converged() {
        let sys = pair2();
        let p = pulse(&sys, 20.0, std::f64::consts::PI, -40.0);
        let mut psi0 = DVector::<C64>::zeros(sys.dim());
        psi0[sys.basis_index(1, 0)] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        psi0[sys.basis_index(1, 1)] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let a = propagate(&sys, &p, &psi0, 0.05).unwrap();
        let b = propagate(&sys, &p, &psi0, 0.025).unwrap();
        let fid = a.dotc(&b).norm();
        assert!(
            1.0 - fid < 1e-8,
            "step-halving fidelity change {:e}",
            1.0 - fid
        );
    }

    #[test]
    fn constant_segments_compose() {
        let sys = pair2();
        let drive = DriveConfig::new(
            sys.target.freq_01 - 40.0,
            C64::from_polar(12.0, 0.0),
            C64::from_polar(12.0, 1.0),
        )
        .unwrap();
        let u1 =
            propagate_unitary(&sys, &PulsedDrive::constant(drive, 50.0).unwrap(), 0.5).unwrap();
        let u2 =
            propagate_unitary(&sys, &PulsedDrive::constant(drive, 100.0).unwrap(), 0.5).unwrap();
        let dev = (&u1 * &u1 - u2)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(dev < 1e-9, "composition deviation {dev:e}");
    }

    #[test]
    fn trajectory_endpoint_matches_propagate() {
        let sys = pair2();
        let p = pulse(&sys, 15.0, std::f64::consts::PI, -40.0);
        let mut psi0 = DVector::<C64>::zeros(sys.dim());
        psi0[sys.basis_index(0, 0)] = C64::new(1.0, 0.0);
        let traj = propagate_trajectory(&sys, &p, &psi0, 0.5, 50).unwrap();
        let end = propagate(&sys, &p, &psi0, 0.5).unwrap();
        let (t_end, last) = traj.last().unwrap();
        assert!((t_end - p.shape.total_ns).abs() < 1e-9);
        assert!((last - end).norm() < 1e-9);
    }

    #[test]
    fn coarse_step_rejected() {
        let sys = pair2();
        let p = pulse(&sys, 10.0, 0.0, -40.0);
        assert!(matches!(
            propagate_unitary(&sys, &p, 30.0),
            Err(Error::StepTooCoarse { .. })
        ));
    }

    #[test]
    fn idle_target_bloch_vector_is_stationary() {
        let mut sys = pair1();
        sys.coupling_j = 0.0;
        let drive = DriveConfig::idle(sys.target.freq_01 - 40.0);
        let p = PulsedDrive::new(drive, shape201());
        let r = conditional_bloch(&sys, &p, 0, 0.5).unwrap();
        assert!((r.x - 1.0).abs() < 1e-9, "r = {r:?}");
        assert!(r.y.abs() < 1e-9);
        assert!(r.z.abs() < 1e-9);
    }

    #[test]
    fn r_metric_reference_points() {
        let ex = BlochVector {
            x: 1.0,
            y: 0.0,
            z: 0.0,
        };
        let mex = BlochVector {
            x: -1.0,
            y: 0.0,
            z: 0.0,
        };
        let ey = BlochVector {
            x: 0.0,
            y: 1.0,
            z: 0.0,
        };
        assert_eq!(r_metric(&ex, &ex), 0.0);
        assert_eq!(r_metric(&ex, &mex), 2.0);
        assert_eq!(r_metric(&ex, &ey), 1.0);
    }

    #[test]
    fn r_metric_rotation_invariant() {
        let r0 = BlochVector {
            x: 0.6,
            y: 0.3,
            z: -0.2,
        };
        let r1 = BlochVector {
            x: -0.4,
            y: 0.1,
            z: 0.8,
        };
        let base = r_metric(&r0, &r1);
        for angle in [0.3_f64, 1.2, 2.9] {
            let (s, c) = angle.sin_cos();
            let rot = |r: &BlochVector| BlochVector {
                x: c * r.x - s * r.y,
                y: s * r.x + c * r.y,
                z: r.z,
            };
            assert!((r_metric(&rot(&r0), &rot(&r1)) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn ramsey_idle_reproduces_static_zz() {
        let sys = pair1();
        let drive = DriveConfig::idle(sys.target.freq_01 - 40.0);
        let times: Vec<f64> = (0..64).map(|k| k as f64 * 100.0).collect();
        let zr = ramsey_zz(&sys, &drive, &times).unwrap();
        let zx = crate::spectrum::zz_rate(&sys, &drive).unwrap();
        assert!(
            (zr - zx).abs() / zx.abs() < 0.02,
            "ramsey {zr} vs exact {zx}"
        );
    }

    #[test]
    fn ramsey_zero_coupling_gives_zero() {
        let mut sys = pair1();
        sys.coupling_j = 0.0;
        let drive = DriveConfig::new(
            sys.target.freq_01 - 40.0,
            C64::from_polar(6.0, 0.0),
            C64::from_polar(6.0, 0.4),
        )
        .unwrap();
        let times: Vec<f64> = (0..64).map(|k| k as f64 * 20.0).collect();
        let z = ramsey_zz(&sys, &drive, &times).unwrap();
        assert!(z.abs() < 1e-6, "zeta = {z:e}");
    }

    #[test]
    fn ramsey_detects_aliasing() {
        let sys = pair1();
        // strong drive: per-state Stark slopes of a few MHz, sampled far too
        // coarsely (500 ns → Nyquist at 1 MHz)
        let drive = DriveConfig::new(
            sys.target.freq_01 - 40.0,
            C64::from_polar(10.0, 0.0),
            C64::from_polar(10.0, 0.0),
        )
        .unwrap();
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 500.0).collect();
        assert!(matches!(
            ramsey_zz(&sys, &drive, &times),
            Err(Error::Aliasing { .. })
        ));
    }

    #[test]
    fn ramsey_needs_enough_points() {
        let sys = pair1();
        let drive = DriveConfig::idle(sys.target.freq_01 - 40.0);
        let times: Vec<f64> = (0..8).map(|k| k as f64 * 100.0).collect();
        assert!(matches!(
            ramsey_zz(&sys, &drive, &times),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn local_z_recovers_known_offset() {
        let vz: Vec<f64> = (0..24)
            .map(|k| std::f64::consts::TAU * k as f64 / 24.0)
            .collect();
        // spectator |0⟩ wants its maximum at φ = 0.7 → φ₀ = −0.7;
        // spectator |1⟩ wants its minimum there → φ₀ = π − 0.7
        let c0 = PhaseCurve {
            vz_angles: vz.clone(),
            values: vz.iter().map(|p| (p - 0.7).cos()).collect(),
        };
        let c1 = PhaseCurve {
            vz_angles: vz.clone(),
            values: vz
                .iter()
                .map(|p| (p - 0.7 + std::f64::consts::PI).cos())
                .collect(),
        };
        let phi = calibrate_local_z(&c0, &c1).unwrap();
        assert!((phi - 0.7).abs() < 1e-6, "phi = {phi}");
    }

    #[test]
    fn local_z_averages_symmetric_offsets() {
        let vz: Vec<f64> = (0..32)
            .map(|k| std::f64::consts::TAU * k as f64 / 32.0)
            .collect();
        let delta = 0.2;
        let c0 = PhaseCurve {
            vz_angles: vz.clone(),
            values: vz.iter().map(|p| (p - (0.7 + delta)).cos()).collect(),
        };
        let c1 = PhaseCurve {
            vz_angles: vz.clone(),
            values: vz
                .iter()
                .map(|p| (p - (0.7 - delta) + std::f64::consts::PI).cos())
                .collect(),
        };
        let phi = calibrate_local_z(&c0, &c1).unwrap();
        assert!((phi - 0.7).abs() < 1e-9, "phi = {phi}");
    }

    #[test]
    fn local_z_rejects_flat_curves() {
        let vz: Vec<f64> = (0..24)
            .map(|k| std::f64::consts::TAU * k as f64 / 24.0)
            .collect();
        let flat = PhaseCurve {
            vz_angles: vz.clone(),
            values: vec![0.01; 24],
        };
        assert!(matches!(
            calibrate_local_z(&flat, &flat),
            Err(Error::LowContrast { .. })
        ));
    }

    #[test]
    fn gate_fidelity_reference_points() {
        let cz = cz_target();
        assert!((average_gate_fidelity(&cz, &cz) - 1.0).abs() < 1e-12);
        // global phase does not matter
        let phased = cz * C64::from_polar(1.0, 1.23);
        assert!((average_gate_fidelity(&phased, &cz) - 1.0).abs() < 1e-12);
        let ident = Matrix4::identity();
        // |tr(CZ)|² = 4 → F = (4 + 4)/20
        assert!((average_gate_fidelity(&ident, &cz) - 0.4).abs() < 1e-12);
    }
}
