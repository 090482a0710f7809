//! Randomized-benchmarking analysis: exponential decay fits, interleaved and
//! cycle-benchmarking fidelity arithmetic, the coherent/stochastic error
//! split from purity decays, leakage rate equations, coherence-limit
//! estimates, and seeded synthetic dataset generation for fitter validation.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crosstalk::fmt_sig;
use crate::error::{Error, Result};
use crate::fit::{least_squares, FitOptions};

/// What a decay dataset measures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayKind {
    Rb,
    Irb,
    CbPauli(String),
    Purity,
    LeakagePop,
}

/// Sequence-length decay data, possibly with several samples per length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayDataset {
    /// Sequence lengths, strictly increasing.
    pub lengths: Vec<u32>,
    /// `values[i]` holds the samples recorded at `lengths[i]`, each in [0, 1].
    pub values: Vec<Vec<f64>>,
    /// Optional per-sample one-sigma uncertainties, same shape as `values`.
    pub sigmas: Option<Vec<Vec<f64>>>,
    pub kind: DecayKind,
}

impl DecayDataset {
    pub fn new(
        lengths: Vec<u32>,
        values: Vec<Vec<f64>>,
        sigmas: Option<Vec<Vec<f64>>>,
        kind: DecayKind,
    ) -> Result<Self> {
        if lengths.len() != values.len() {
            return Err(Error::InvalidParam(format!(
                "{} lengths vs {} value groups",
                lengths.len(),
                values.len()
            )));
        }
        if lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParam(
                "sequence lengths must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|g| g.is_empty()) {
            return Err(Error::InvalidParam("empty sample group".into()));
        }
        if values
            .iter()
            .flatten()
            .any(|&v| !(0.0..=1.0).contains(&v) || !v.is_finite())
        {
            return Err(Error::InvalidParam("values must lie in [0, 1]".into()));
        }
        if let Some(s) = &sigmas {
            if s.len() != values.len()
                || s.iter().zip(&values).any(|(a, b)| a.len() != b.len())
                || s.iter().flatten().any(|&v| !(v > 0.0))
            {
                return Err(Error::InvalidParam(
                    "sigmas must match values and be positive".into(),
                ));
            }
        }
        Ok(Self {
            lengths,
            values,
            sigmas,
            kind,
        })
    }

    /// Flattened (m, value, sigma) triples; sigma defaults to 1.
    fn samples(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for (i, &m) in self.lengths.iter().enumerate() {
            for (j, &v) in self.values[i].iter().enumerate() {
                let s = self.sigmas.as_ref().map_or(1.0, |s| s[i][j]);
                out.push((m as f64, v, s));
            }
        }
        out
    }

    pub const CSV_HEADER: &'static str = "m,value";

    /// Read `m,value` rows (one per sample; repeated m allowed).
    pub fn read_csv<R: BufRead>(reader: R, kind: DecayKind) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == Self::CSV_HEADER => {}
            Some((_, Ok(h))) => {
                return Err(Error::CsvSchema {
                    line: 1,
                    field: "header",
                    reason: format!("expected `{}`, got `{}`", Self::CSV_HEADER, h.trim()),
                })
            }
            _ => {
                return Err(Error::CsvSchema {
                    line: 1,
                    field: "header",
                    reason: "missing header line".into(),
                })
            }
        }
        let mut grouped: Vec<(u32, Vec<f64>)> = Vec::new();
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
            if cols.len() != 2 {
                return Err(Error::CsvSchema {
                    line: idx + 1,
                    field: "record",
                    reason: format!("expected 2 fields, got {}", cols.len()),
                });
            }
            let m: u32 = cols[0].trim().parse().map_err(|_| Error::CsvSchema {
                line: idx + 1,
                field: "m",
                reason: format!("not an integer: `{}`", cols[0].trim()),
            })?;
            let v: f64 = cols[1].trim().parse().map_err(|_| Error::CsvSchema {
                line: idx + 1,
                field: "value",
                reason: format!("not a number: `{}`", cols[1].trim()),
            })?;
            match grouped.last_mut() {
                Some((last_m, group)) if *last_m == m => group.push(v),
                _ => grouped.push((m, vec![v])),
            }
        }
        let (lengths, values): (Vec<u32>, Vec<Vec<f64>>) = grouped.into_iter().unzip();
        Self::new(lengths, values, None, kind)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for (i, &m) in self.lengths.iter().enumerate() {
            for &v in &self.values[i] {
                writeln!(w, "{m},{}", fmt_sig(v))?;
            }
        }
        Ok(())
    }
}

/// Result of an exponential decay fit P(m) = A·pᵐ.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub p: f64,
    pub sigma_amplitude: f64,
    pub sigma_p: f64,
    /// Set when the unconstrained fit preferred p > 1 and was clamped.
    pub clamped: bool,
    pub chi2: f64,
}

/// Weighted least-squares fit of the exponential decay model, initialized in
/// the log domain.
pub fn fit_decay(data: &DecayDataset) -> Result<DecayFit> {
    let samples = data.samples();
    if data.lengths.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs >= 3 distinct lengths, got {}",
            data.lengths.len()
        )));
    }
    let weighted = data.sigmas.is_some();

    // log-domain initialization: ln v = ln A + m ln p
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(m, v, _) in &samples {
        let lv = v.max(1e-12).ln();
        sx += m;
        sy += lv;
        sxx += m * m;
        sxy += m * lv;
        n += 1.0;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let x0 = [intercept.exp().clamp(1e-6, 1.0), slope.exp().clamp(1e-6, 1.5)];

    let residuals = |p: &[f64]| -> Vec<f64> {
        samples
            .iter()
            .map(|&(m, v, s)| (p[0] * p[1].powf(m) - v) / s)
            .collect()
    };
    let opts = FitOptions {
        scale_covariance: !weighted,
        ..FitOptions::default()
    };
    let res = least_squares(&residuals, &x0, &opts)?;

    if res.params[1] > 1.0 {
        // non-decaying data: pin p = 1 and fit the amplitude alone
        let amp_res = |p: &[f64]| -> Vec<f64> {
            samples.iter().map(|&(_, v, s)| (p[0] - v) / s).collect()
        };
        let amp = least_squares(&amp_res, &[res.params[0]], &opts)?;
        return Ok(DecayFit {
            amplitude: amp.params[0],
            p: 1.0,
            sigma_amplitude: amp.uncertainties[0],
            sigma_p: res.uncertainties[1],
            clamped: true,
            chi2: amp.chi2,
        });
    }
    Ok(DecayFit {
        amplitude: res.params[0],
        p: res.params[1],
        sigma_amplitude: res.uncertainties[0],
        sigma_p: res.uncertainties[1],
        clamped: false,
        chi2: res.chi2,
    })
}

/// Gate fidelity estimate from reference and interleaved decay parameters:
/// gate error r = (d−1)/d · (1 − p_int/p_ref), F = 1 − r.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InterleavedFidelity {
    pub fidelity: f64,
    pub gate_error: f64,
    /// Set when p_int > p_ref or a decay parameter exceeds 1 (the estimate
    /// is then outside its usual range but still reported).
    pub warned: bool,
}

pub fn interleaved_fidelity(p_ref: f64, p_int: f64, d: u32) -> Result<InterleavedFidelity> {
    if d < 2 {
        return Err(Error::InvalidParam(format!("dimension d = {d} below 2")));
    }
    if !(p_ref > 0.0) || !p_int.is_finite() {
        return Err(Error::InvalidParam(format!(
            "decay parameters must be positive, got p_ref = {p_ref}, p_int = {p_int}"
        )));
    }
    let warned = p_int > p_ref || p_ref > 1.0 || p_int <= 0.0;
    let d = d as f64;
    let gate_error = (d - 1.0) / d * (1.0 - p_int / p_ref);
    Ok(InterleavedFidelity {
        fidelity: 1.0 - gate_error,
        gate_error,
        warned,
    })
}

/// One Pauli-eigenstate decay record for cycle benchmarking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CbLabel {
    pub label: String,
    pub p: f64,
    pub sigma: f64,
}

pub const CB_CSV_HEADER: &str = "pauli_label,p,sigma";

/// Read `pauli_label,p,sigma` records.
pub fn read_cb_csv<R: BufRead>(reader: R) -> Result<Vec<CbLabel>> {
    let mut out = Vec::new();
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == CB_CSV_HEADER => {}
        Some((_, Ok(h))) => {
            return Err(Error::CsvSchema {
                line: 1,
                field: "header",
                reason: format!("expected `{CB_CSV_HEADER}`, got `{}`", h.trim()),
            })
        }
        _ => {
            return Err(Error::CsvSchema {
                line: 1,
                field: "header",
                reason: "missing header line".into(),
            })
        }
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
        if cols.len() != 3 {
            return Err(Error::CsvSchema {
                line: idx + 1,
                field: "record",
                reason: format!("expected 3 fields, got {}", cols.len()),
            });
        }
        let p: f64 = cols[1].trim().parse().map_err(|_| Error::CsvSchema {
            line: idx + 1,
            field: "p",
            reason: format!("not a number: `{}`", cols[1].trim()),
        })?;
        let sigma: f64 = cols[2].trim().parse().map_err(|_| Error::CsvSchema {
            line: idx + 1,
            field: "sigma",
            reason: format!("not a number: `{}`", cols[2].trim()),
        })?;
        out.push(CbLabel {
            label: cols[0].trim().to_string(),
            p,
            sigma,
        });
    }
    Ok(out)
}

/// Per-label error rates and the averaged process fidelity from
/// cycle-benchmarking decays.
#[derive(Debug, Clone, Serialize)]
pub struct CbAnalysis {
    /// (label, e_i) with e_i = (1 − p_i)(1 − 1/d²).
    pub label_errors: Vec<(String, f64)>,
    /// Mean of the per-label decay parameters.
    pub average_p: f64,
    /// (1 − p̄)(1 − 1/d²).
    pub process_infidelity: f64,
}

pub fn cb_analyze(labels: &[CbLabel], d: u32) -> Result<CbAnalysis> {
    if labels.is_empty() {
        return Err(Error::InsufficientData("no Pauli labels".into()));
    }
    if d < 2 {
        return Err(Error::InvalidParam(format!("dimension d = {d} below 2")));
    }
    for l in labels {
        if !(l.p > 0.0 && l.p <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "label {}: p = {} outside (0, 1]",
                l.label, l.p
            )));
        }
    }
    let d2 = (d as f64) * (d as f64);
    let factor = 1.0 - 1.0 / d2;
    let label_errors = labels
        .iter()
        .map(|l| (l.label.clone(), (1.0 - l.p) * factor))
        .collect();
    let average_p = labels.iter().map(|l| l.p).sum::<f64>() / labels.len() as f64;
    Ok(CbAnalysis {
        label_errors,
        average_p,
        process_infidelity: (1.0 - average_p) * factor,
    })
}

/// Split of the process infidelity into stochastic and coherent parts.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErrorBudget {
    /// Total process infidelity.
    pub e_f: f64,
    /// Stochastic part.
    pub e_s: f64,
    /// Coherent part; e_f = e_s + e_u by construction.
    pub e_u: f64,
    /// Set when the raw split gave e_u < 0 and both parts were clamped.
    pub floored: bool,
}

impl ErrorBudget {
    /// Budget directly from the two infidelities.
    pub fn from_infidelities(e_f: f64, e_s: f64) -> Result<Self> {
        if e_f < 0.0 || e_s < 0.0 {
            return Err(Error::InvalidParam(format!(
                "infidelities must be >= 0, got e_f = {e_f}, e_s = {e_s}"
            )));
        }
        if e_s > e_f {
            return Ok(Self {
                e_f,
                e_s: e_f,
                e_u: 0.0,
                floored: true,
            });
        }
        Ok(Self {
            e_f,
            e_s,
            e_u: e_f - e_s,
            floored: false,
        })
    }
}

/// Coherent/stochastic error split from the reference decay parameter and
/// the unitarity u of the purity decay:
/// e_F = (1 − p_rb)(1 − 1/d²), e_S = (1 − √u)(1 − 1/d²), e_U = e_F − e_S.
pub fn xrb_decompose(p_rb: f64, unitarity: f64, d: u32) -> Result<ErrorBudget> {
    if !(unitarity > 0.0 && unitarity <= 1.0) {
        return Err(Error::InvalidUnitarity(unitarity));
    }
    if !(p_rb > 0.0 && p_rb <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "p_rb = {p_rb} outside (0, 1]"
        )));
    }
    if d < 2 {
        return Err(Error::InvalidParam(format!("dimension d = {d} below 2")));
    }
    let factor = 1.0 - 1.0 / ((d as f64) * (d as f64));
    let e_f = (1.0 - p_rb) * factor;
    let e_s = (1.0 - unitarity.sqrt()) * factor;
    ErrorBudget::from_infidelities(e_f, e_s)
}

/// Leakage and seepage rates from a |2⟩-population rate-equation fit.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LeakageRates {
    /// Leakage rate γ↑ per sequence step.
    pub gamma_up: f64,
    /// Seepage rate γ↓ per sequence step.
    pub gamma_down: f64,
    pub sigma_gamma_up: f64,
    pub sigma_gamma_down: f64,
    pub chi2: f64,
}

/// Fit |2⟩ populations to P₂(m) = B − A·e^{−Γm} with Γ = γ↑ + γ↓ and
/// B = γ↑/Γ; returns the two rates.
///
/// The fit is unweighted: populations here are near-zero counts whose
/// per-point sigma estimates shrink with downward fluctuations, so
/// inverse-variance weighting biases the recovered rates low.
pub fn lrb_fit(data: &DecayDataset) -> Result<LeakageRates> {
    let samples: Vec<(f64, f64, f64)> = data
        .samples()
        .into_iter()
        .map(|(m, v, _)| (m, v, 1.0))
        .collect();
    if data.lengths.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "leakage fit needs >= 3 distinct lengths, got {}",
            data.lengths.len()
        )));
    }
    let vmin = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let vmax = samples.iter().map(|s| s.1).fold(0.0_f64, f64::max);
    if vmax - vmin < 1e-9 {
        return Err(Error::ModelMismatch(
            "flat population data: growth rate unidentifiable".into(),
        ));
    }
    // initialization: asymptote near the last length, rate from the grid span
    let last = data.values.last().unwrap();
    let b0 = (last.iter().sum::<f64>() / last.len() as f64).max(1e-6);
    let first = &data.values[0];
    let a0 = (b0 - first.iter().sum::<f64>() / first.len() as f64).max(1e-8);
    let g0 = 3.0 / *data.lengths.last().unwrap() as f64;
    let residuals = |p: &[f64]| -> Vec<f64> {
        samples
            .iter()
            .map(|&(m, v, s)| (p[1] - p[0] * (-p[2] * m).exp() - v) / s)
            .collect()
    };
    let opts = FitOptions {
        scale_covariance: true,
        ..FitOptions::default()
    };
    let res = least_squares(&residuals, &[a0, b0, g0], &opts)?;
    let (b, gamma) = (res.params[1], res.params[2]);
    if b < 0.0 || gamma <= 0.0 || res.params[0] <= 0.0 {
        return Err(Error::ModelMismatch(format!(
            "fitted rate-equation parameters unphysical: A = {:.3e}, B = {:.3e}, Γ = {:.3e}",
            res.params[0], b, gamma
        )));
    }
    let gamma_up = b * gamma;
    let gamma_down = gamma - gamma_up;
    // first-order propagation through γ↑ = B·Γ, γ↓ = (1 − B)·Γ
    let cov = &res.covariance;
    let var_up = (gamma * gamma) * cov[(1, 1)]
        + (b * b) * cov[(2, 2)]
        + 2.0 * gamma * b * cov[(1, 2)];
    let var_down = (gamma * gamma) * cov[(1, 1)] + (1.0 - b) * (1.0 - b) * cov[(2, 2)]
        - 2.0 * gamma * (1.0 - b) * cov[(1, 2)];
    Ok(LeakageRates {
        gamma_up,
        gamma_down: gamma_down.max(0.0),
        sigma_gamma_up: var_up.max(0.0).sqrt(),
        sigma_gamma_down: var_down.max(0.0).sqrt(),
        chi2: res.chi2,
    })
}

/// Leakage added per interleaved gate: γ↑(interleaved) − γ↑(reference),
/// floored at zero. Returns (rate, floored).
pub fn leakage_per_gate(gamma_up_interleaved: f64, gamma_up_reference: f64) -> Result<(f64, bool)> {
    if gamma_up_interleaved < 0.0 || gamma_up_reference < 0.0 {
        return Err(Error::InvalidParam(
            "leakage rates must be >= 0".into(),
        ));
    }
    let diff = gamma_up_interleaved - gamma_up_reference;
    if diff < 0.0 {
        Ok((0.0, true))
    } else {
        Ok((diff, false))
    }
}

/// Decoherence-limited process infidelity estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoherenceLimit {
    pub process_infidelity: f64,
    /// Set when some T₂ exceeds 2T₁ (unphysical for pure damping+dephasing).
    pub warned: bool,
}

/// Per-qubit average-fidelity decay under amplitude damping plus dephasing
/// over one gate, F_q = 1/2 + e^{−t/T₂}/3 + e^{−t/T₁}/6, combined across the
/// two qubits and converted to a process infidelity with the (d+1)/d factor.
pub fn coherence_limit(
    t1_c_us: f64,
    t2_c_us: f64,
    t1_t_us: f64,
    t2_t_us: f64,
    gate_len_us: f64,
    d: u32,
) -> Result<CoherenceLimit> {
    for (name, v) in [
        ("t1_c", t1_c_us),
        ("t2_c", t2_c_us),
        ("t1_t", t1_t_us),
        ("t2_t", t2_t_us),
    ] {
        if !(v > 0.0) {
            return Err(Error::InvalidParam(format!("{name} must be > 0, got {v}")));
        }
    }
    if gate_len_us < 0.0 {
        return Err(Error::InvalidParam(format!(
            "gate length must be >= 0, got {gate_len_us}"
        )));
    }
    if d < 2 {
        return Err(Error::InvalidParam(format!("dimension d = {d} below 2")));
    }
    let warned = t2_c_us > 2.0 * t1_c_us || t2_t_us > 2.0 * t1_t_us;
    let fq = |t1: f64, t2: f64| {
        0.5 + (-gate_len_us / t2).exp() / 3.0 + (-gate_len_us / t1).exp() / 6.0
    };
    let f_avg = fq(t1_c_us, t2_c_us) * fq(t1_t_us, t2_t_us);
    let d = d as f64;
    Ok(CoherenceLimit {
        process_infidelity: (1.0 - f_avg) * (d + 1.0) / d,
        warned,
    })
}

/// Decay models available to the synthetic generator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum SynthModel {
    /// P(m) = A·pᵐ
    Exponential { a: f64, p: f64 },
    /// P(m) = B − A·e^{−Γm}
    Leakage { a: f64, b: f64, gamma: f64 },
}

impl SynthModel {
    fn eval(&self, m: f64) -> f64 {
        match *self {
            Self::Exponential { a, p } => a * p.powf(m),
            Self::Leakage { a, b, gamma } => b - a * (-gamma * m).exp(),
        }
    }

    fn kind(&self) -> DecayKind {
        match self {
            Self::Exponential { .. } => DecayKind::Rb,
            Self::Leakage { .. } => DecayKind::LeakagePop,
        }
    }
}

/// Shot-noise handling for [`synth_decay`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum Sampling {
    /// Infinite-shot limit: exact model values, no noise.
    Exact,
    /// Binomial sampling with this many shots per point.
    Shots(u32),
}

/// Generate a synthetic decay dataset, deterministically for a fixed seed.
/// Binomial sigmas are attached so downstream fits are properly weighted.
pub fn synth_decay(
    model: &SynthModel,
    lengths: &[u32],
    samples_per_length: usize,
    sampling: Sampling,
    seed: u64,
) -> Result<DecayDataset> {
    if lengths.is_empty() || samples_per_length == 0 {
        return Err(Error::InvalidParam("empty synthetic grid".into()));
    }
    if let Sampling::Shots(0) = sampling {
        return Err(Error::InvalidParam("shots must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(lengths.len());
    let mut sigmas = Vec::with_capacity(lengths.len());
    for &m in lengths {
        let truth = model.eval(m as f64).clamp(0.0, 1.0);
        let mut group = Vec::with_capacity(samples_per_length);
        let mut group_sigma = Vec::with_capacity(samples_per_length);
        for _ in 0..samples_per_length {
            match sampling {
                Sampling::Exact => {
                    group.push(truth);
                    group_sigma.push(1e-9);
                }
                Sampling::Shots(shots) => {
                    let mut hits = 0u32;
                    for _ in 0..shots {
                        if rng.gen::<f64>() < truth {
                            hits += 1;
                        }
                    }
                    let est = hits as f64 / shots as f64;
                    // clamp the rate estimate away from {0, 1} for the sigma
                    let n = shots as f64;
                    let p_hat = est.clamp(1.0 / (n + 2.0), 1.0 - 1.0 / (n + 2.0));
                    group.push(est);
                    group_sigma.push((p_hat * (1.0 - p_hat) / n).sqrt());
                }
            }
        }
        values.push(group);
        sigmas.push(group_sigma);
    }
    DecayDataset::new(lengths.to_vec(), values, Some(sigmas), model.kind())
}
