//! Microwave-crosstalk forward model and crosstalk fitting from ZZ sweeps.
//!
//! Drive-line amplitudes mix into on-chip fields through a complex 2×2
//! matrix:
//!
//! ```text
//! (ε_c)   (e^{iθ_c}         C_ct e^{iφ_ct}) (A_c            )
//! (ε_t) = (C_tc e^{iφ_tc}   1             ) (A_t e^{−iφ_d}  ) · scale
//! ```
//!
//! The fitter recovers the five crosstalk parameters plus the
//! amplitude-to-field scale from measured ζ(A_c, A_t, φ_d) sweeps by
//! inverse-variance weighted least squares against the exact-diagonalization
//! model.

use std::io::{BufRead, Write};

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{least_squares, FitOptions};
use crate::hamiltonian::{DriveConfig, SystemParams};
use crate::spectrum::zz_rate;
use crate::wrap_phase;

/// Complex 2×2 mixing from drive-line amplitudes to on-chip fields.
/// Magnitudes are dimensionless; phases are radians in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkMatrix {
    /// Magnitude mapping the target line onto the control field.
    pub c_ct: f64,
    pub phi_ct: f64,
    /// Magnitude mapping the control line onto the target field.
    pub c_tc: f64,
    pub phi_tc: f64,
    /// Electrical-delay phase on the control line.
    pub theta_c: f64,
}

impl CrosstalkMatrix {
    pub fn new(c_ct: f64, phi_ct: f64, c_tc: f64, phi_tc: f64, theta_c: f64) -> Result<Self> {
        if c_ct < 0.0 || c_tc < 0.0 {
            return Err(Error::InvalidParam(format!(
                "crosstalk magnitudes must be >= 0, got c_ct={c_ct}, c_tc={c_tc}"
            )));
        }
        Ok(Self {
            c_ct,
            phi_ct: wrap_phase(phi_ct),
            c_tc,
            phi_tc: wrap_phase(phi_tc),
            theta_c: wrap_phase(theta_c),
        })
    }

    /// No mixing: fields equal line amplitudes.
    pub fn identity() -> Self {
        Self {
            c_ct: 0.0,
            phi_ct: 0.0,
            c_tc: 0.0,
            phi_tc: 0.0,
            theta_c: 0.0,
        }
    }

    fn rows(&self) -> [[C64; 2]; 2] {
        [
            [
                C64::from_polar(1.0, self.theta_c),
                C64::from_polar(self.c_ct, self.phi_ct),
            ],
            [C64::from_polar(self.c_tc, self.phi_tc), C64::new(1.0, 0.0)],
        ]
    }

    /// Bring negative magnitudes and out-of-range phases produced by an
    /// unconstrained fit back to the canonical domain.
    fn canonicalized(c_ct: f64, phi_ct: f64, c_tc: f64, phi_tc: f64, theta_c: f64) -> Self {
        let (c_ct, phi_ct) = if c_ct < 0.0 {
            (-c_ct, phi_ct + std::f64::consts::PI)
        } else {
            (c_ct, phi_ct)
        };
        let (c_tc, phi_tc) = if c_tc < 0.0 {
            (-c_tc, phi_tc + std::f64::consts::PI)
        } else {
            (c_tc, phi_tc)
        };
        Self {
            c_ct,
            phi_ct: wrap_phase(phi_ct),
            c_tc,
            phi_tc: wrap_phase(phi_tc),
            theta_c: wrap_phase(theta_c),
        }
    }
}

/// On-chip complex fields (ε_c, ε_t) in MHz produced by line amplitudes
/// `a_c`, `a_t` (device units) at relative line phase `phi_d`, through the
/// crosstalk matrix and the MHz-per-device-unit `scale`.
pub fn apply_crosstalk(
    xt: &CrosstalkMatrix,
    a_c: f64,
    a_t: f64,
    phi_d: f64,
    scale: f64,
) -> Result<(C64, C64)> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParam(format!(
            "scale must be positive, got {scale}"
        )));
    }
    Ok(apply_unchecked(xt, a_c, a_t, phi_d, scale))
}

fn apply_unchecked(xt: &CrosstalkMatrix, a_c: f64, a_t: f64, phi_d: f64, scale: f64) -> (C64, C64) {
    let m = xt.rows();
    let input = [
        C64::new(a_c, 0.0),
        C64::from_polar(1.0, -phi_d) * C64::new(a_t, 0.0),
    ];
    let eps_c = (m[0][0] * input[0] + m[0][1] * input[1]) * scale;
    let eps_t = (m[1][0] * input[0] + m[1][1] * input[1]) * scale;
    (eps_c, eps_t)
}

/// One measured point of a ZZ-vs-drive sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZZSweepPoint {
    pub a_c: f64,
    pub a_t: f64,
    pub phi_d: f64,
    pub zeta_mhz: f64,
    pub sigma_mhz: f64,
}

impl ZZSweepPoint {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_mhz > 0.0) {
            return Err(Error::InvalidParam(format!(
                "sweep-point uncertainty must be > 0, got {}",
                self.sigma_mhz
            )));
        }
        Ok(())
    }
}

pub const SWEEP_CSV_HEADER: &str = "a_c,a_t,phi_d,zeta_mhz,sigma_mhz";

/// Read sweep points from CSV with header [`SWEEP_CSV_HEADER`].
pub fn read_sweep_csv<R: BufRead>(reader: R) -> Result<Vec<ZZSweepPoint>> {
    const FIELDS: [&str; 5] = ["a_c", "a_t", "phi_d", "zeta_mhz", "sigma_mhz"];
    let mut out = Vec::new();
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        _ => {
            return Err(Error::CsvSchema {
                line: 1,
                field: "header",
                reason: "missing header line".into(),
            })
        }
    };
    if header.trim() != SWEEP_CSV_HEADER {
        return Err(Error::CsvSchema {
            line: 1,
            field: "header",
            reason: format!("expected `{SWEEP_CSV_HEADER}`, got `{}`", header.trim()),
        });
    }
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::CsvSchema {
            line: idx + 1,
            field: "line",
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::CsvSchema {
                line: idx + 1,
                field: "record",
                reason: format!("expected 5 fields, got {}", cols.len()),
            });
        }
        let mut vals = [0.0_f64; 5];
        for (k, (col, name)) in cols.iter().zip(FIELDS).enumerate() {
            vals[k] = col.trim().parse().map_err(|_| Error::CsvSchema {
                line: idx + 1,
                field: name,
                reason: format!("not a number: `{}`", col.trim()),
            })?;
        }
        let point = ZZSweepPoint {
            a_c: vals[0],
            a_t: vals[1],
            phi_d: vals[2],
            zeta_mhz: vals[3],
            sigma_mhz: vals[4],
        };
        point.validate().map_err(|e| Error::CsvSchema {
            line: idx + 1,
            field: "sigma_mhz",
            reason: e.to_string(),
        })?;
        out.push(point);
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(mut w: W, points: &[ZZSweepPoint]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_sig(p.a_c),
            fmt_sig(p.a_t),
            fmt_sig(p.phi_d),
            fmt_sig(p.zeta_mhz),
            fmt_sig(p.sigma_mhz)
        )?;
    }
    Ok(())
}

/// 12-significant-digit float formatting used by all CSV emitters.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.11e}")
}

/// Fitted crosstalk parameters with one-sigma uncertainties.
#[derive(Debug, Clone, Serialize)]
pub struct CrosstalkFit {
    pub matrix: CrosstalkMatrix,
    pub scale: f64,
    /// Uncertainties in parameter order (c_ct, phi_ct, c_tc, phi_tc, theta_c,
    /// scale).
    pub uncertainties: [f64; 6],
    /// Inverse-variance weighted chi-square at the solution.
    pub chi_square: f64,
    /// Unweighted sum of squared model−data mismatches, MHz².
    pub residual_mhz2: f64,
    pub iterations: usize,
}

/// Model ζ for one sweep point under crosstalk parameters `p`
/// (c_ct, phi_ct, c_tc, phi_tc, theta_c, scale).
fn model_zeta(p: &[f64], sys: &SystemParams, drive_freq: f64, pt: &ZZSweepPoint) -> Result<f64> {
    let xt = CrosstalkMatrix {
        c_ct: p[0],
        phi_ct: p[1],
        c_tc: p[2],
        phi_tc: p[3],
        theta_c: p[4],
    };
    let (eps_c, eps_t) = apply_unchecked(&xt, pt.a_c, pt.a_t, pt.phi_d, p[5]);
    let drive = DriveConfig::new(drive_freq, eps_c, eps_t)?;
    zz_rate(sys, &drive)
}

/// Fit crosstalk parameters and scale to measured sweep data.
///
/// Requires at least 12 points spanning at least half a period in φ_d and at
/// least two distinct amplitude pairs. Minimizes Σ[(ζ_model − ζ_meas)/σ]²;
/// restarts from four phase-shifted initializations to escape the phase-wrap
/// local minima of the periodic objective.
pub fn fit_crosstalk(
    data: &[ZZSweepPoint],
    sys: &SystemParams,
    drive_freq: f64,
    initial: &CrosstalkMatrix,
    initial_scale: f64,
) -> Result<CrosstalkFit> {
    for p in data {
        p.validate()?;
    }
    if data.len() < 12 {
        return Err(Error::InsufficientData(format!(
            "crosstalk fit needs >= 12 points, got {}",
            data.len()
        )));
    }
    let phi_span = data
        .iter()
        .map(|p| p.phi_d)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if phi_span.1 - phi_span.0 < std::f64::consts::PI {
        return Err(Error::InsufficientData(format!(
            "phi_d span {:.3} rad below half a period",
            phi_span.1 - phi_span.0
        )));
    }
    let mut amp_pairs: Vec<(f64, f64)> = data.iter().map(|p| (p.a_c, p.a_t)).collect();
    amp_pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    amp_pairs.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    if amp_pairs.len() < 2 {
        return Err(Error::InsufficientData(
            "crosstalk fit needs >= 2 distinct amplitude pairs".into(),
        ));
    }
    if !(initial_scale > 0.0) {
        return Err(Error::InvalidParam(format!(
            "initial scale must be positive, got {initial_scale}"
        )));
    }

    let residuals = |p: &[f64]| -> Vec<f64> {
        data.par_iter()
            .map(|pt| match model_zeta(p, sys, drive_freq, pt) {
                // A labeling failure inside the search region dominates the
                // objective rather than aborting the fit.
                Ok(zm) => (zm - pt.zeta_mhz) / pt.sigma_mhz,
                Err(_) => 1e6,
            })
            .collect()
    };

    let opts = FitOptions {
        max_iterations: 120,
        ..FitOptions::default()
    };
    // A solution with fractional mixing magnitudes is what the model means;
    // basins with |C| of order ten are role-swapped degeneracies that can
    // overfit noisy data and are only accepted if nothing physical converged.
    let physical = |res: &crate::fit::FitResult| {
        res.params[0].abs() <= 2.0 && res.params[2].abs() <= 2.0
    };
    let dof = (data.len() as f64 - 6.0).max(1.0);
    let noise_consistent = |chi2: f64| chi2 <= dof + 3.0 * (2.0 * dof).sqrt();

    let mut best: Option<FitOutcome> = None;
    for quarter in 0..4 {
        let shift = std::f64::consts::FRAC_PI_2 * quarter as f64;
        let x0 = [
            initial.c_ct,
            initial.phi_ct + shift,
            initial.c_tc,
            initial.phi_tc + shift,
            initial.theta_c + shift,
            initial_scale,
        ];
        let outcome = match least_squares(&residuals, &x0, &opts) {
            Ok(res) => FitOutcome::Ok(res),
            Err(e) => FitOutcome::Failed(e),
        };
        let better = match (&best, &outcome) {
            (None, _) => true,
            (Some(FitOutcome::Failed(_)), FitOutcome::Ok(_)) => true,
            (Some(FitOutcome::Ok(a)), FitOutcome::Ok(b)) => match (physical(a), physical(b)) {
                (true, false) => false,
                (false, true) => true,
                _ => b.chi2 < a.chi2,
            },
            _ => false,
        };
        if better {
            best = Some(outcome);
        }
        if let Some(FitOutcome::Ok(res)) = &best {
            if physical(res) && noise_consistent(res.chi2) {
                break;
            }
        }
    }

    match best.expect("at least one restart ran") {
        FitOutcome::Failed(e) => Err(e),
        FitOutcome::Ok(res) => {
            let mut p = res.params.clone();
            // a negative scale flips both fields by a global sign, which no
            // observable distinguishes; fold it away
            p[5] = p[5].abs();
            let matrix = CrosstalkMatrix::canonicalized(p[0], p[1], p[2], p[3], p[4]);
            let residual_mhz2 = data
                .par_iter()
                .map(|pt| {
                    model_zeta(&p, sys, drive_freq, pt)
                        .map(|zm| (zm - pt.zeta_mhz).powi(2))
                        .unwrap_or(f64::INFINITY)
                })
                .sum();
            Ok(CrosstalkFit {
                matrix,
                scale: p[5],
                uncertainties: [
                    res.uncertainties[0],
                    res.uncertainties[1],
                    res.uncertainties[2],
                    res.uncertainties[3],
                    res.uncertainties[4],
                    res.uncertainties[5],
                ],
                chi_square: res.chi2,
                residual_mhz2,
                iterations: res.iterations,
            })
        }
    }
}

enum FitOutcome {
    Ok(crate::fit::FitResult),
    Failed(Error),
}
