//! Error types shared across the toolkit.

use thiserror::Error;

/// Errors produced by construction, diagonalization, fitting, and calibration.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Level truncation too small to represent the model.
    #[error("invalid truncation: levels = {levels}, need at least {min}")]
    InvalidTruncation { levels: usize, min: usize },

    /// A domain invariant on an input parameter was violated.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A matrix claimed Hermitian deviates from its conjugate transpose.
    #[error("non-Hermitian matrix: max |H - H^dag| = {max_dev:e} exceeds {tol:e} * max|H|")]
    NonHermitian { max_dev: f64, tol: f64 },

    /// Dressed-state labeling could not produce an injective assignment.
    #[error("dressed-state labeling failed; ambiguous labels: {labels:?}")]
    LabelingFailure { labels: Vec<(usize, usize)> },

    /// A perturbative denominator is too close to zero to evaluate.
    #[error("straddled resonance: |{factor}| = {value:e} MHz below 1e-6 MHz")]
    StraddledResonance { factor: &'static str, value: f64 },

    /// Drive sits exactly on the target transition.
    #[error("resonant drive: target detuning is zero")]
    ResonantDrive,

    /// Nonlinear fit failed to converge; carries the best point found.
    #[error("fit did not converge after {iterations} iterations (chi2 = {chi2:e})")]
    FitFailure {
        iterations: usize,
        chi2: f64,
        best: Vec<f64>,
    },

    /// Input data cannot constrain the requested fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Fitted model is inconsistent with the data (e.g. unidentifiable rate).
    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    /// Ramsey phase evolution is undersampled by the supplied time grid.
    #[error("phase aliasing: slope {slope_full:+.6} MHz (full grid) vs {slope_decimated:+.6} MHz (decimated)")]
    Aliasing {
        slope_full: f64,
        slope_decimated: f64,
    },

    /// Propagation step too coarse relative to the pulse duration.
    #[error("step {step_ns} ns too coarse: must be <= total/10 = {max_ns} ns")]
    StepTooCoarse { step_ns: f64, max_ns: f64 },

    /// Phase-calibration curve has too little contrast to fit.
    #[error("low contrast: |c| = {contrast:.4} below 0.1")]
    LowContrast { contrast: f64 },

    /// Unitarity estimate outside its physical range.
    #[error("invalid unitarity u = {0}; must be in (0, 1]")]
    InvalidUnitarity(f64),

    /// No grid point reached the minimum usable entanglement measure.
    #[error("calibration failure: best R = {best_r:.4} < {required:.2}; expand the sweep grid")]
    CalibrationFailure { best_r: f64, required: f64 },

    /// A CSV record did not match the documented schema.
    #[error("csv ingestion error at line {line}, field `{field}`: {reason}")]
    CsvSchema {
        line: usize,
        field: &'static str,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
