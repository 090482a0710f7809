//! Subcommand implementations.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use starkzz::benchmarking::{
    cb_analyze, coherence_limit, fit_decay, interleaved_fidelity, leakage_per_gate, lrb_fit,
    read_cb_csv, synth_decay, xrb_decompose, DecayDataset, DecayKind, ErrorBudget, Sampling,
    SynthModel,
};
use starkzz::crosstalk::{apply_crosstalk, fit_crosstalk, fmt_sig, read_sweep_csv};
use starkzz::dynamics::{
    calibrate_cz, ramsey_trace, CalibrationSettings, PulseShape, RSweepSettings,
};
use starkzz::perturbation::zeta_pt_total;
use starkzz::spectrum::{zz_rate, zz_rate_with_reference, LabelReference};
use starkzz::DriveConfig;

use crate::config::{AxisKind, RunConfig, SweepAxis};
use crate::manifest::Manifest;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    write_file(path, (text + "\n").as_bytes())
}

// ---------------------------------------------------------------------------
// zz-sweep

struct SweepRow {
    axis_values: Vec<f64>,
    zeta_exact: f64,
    zeta_pt: f64,
    flagged: bool,
}

/// One grid point in baseline+override form.
fn drive_at(
    cfg: &RunConfig,
    axes: &[(AxisKind, f64)],
) -> Result<DriveConfig, starkzz::Error> {
    let mut amp_c = cfg.drive.amp_c;
    let mut amp_t = cfg.drive.amp_t;
    let mut phi_d = cfg.drive.phi_d;
    let mut drive_freq = cfg.drive.drive_freq_mhz;
    for &(kind, v) in axes {
        match kind {
            AxisKind::PhiD => phi_d = v,
            AxisKind::AmpC => amp_c = v,
            AxisKind::AmpT => amp_t = v,
            AxisKind::AmpGlobal => {
                amp_c = v;
                amp_t = v;
            }
            AxisKind::DriveFreq => drive_freq = v,
        }
    }
    let (eps_c, eps_t) = apply_crosstalk(
        &cfg.crosstalk_or_identity(),
        amp_c,
        amp_t,
        phi_d,
        cfg.scale_mhz_per_unit,
    )?;
    DriveConfig::new(drive_freq, eps_c, eps_t)
}

fn sweep_line(
    cfg: &RunConfig,
    outer: Option<(AxisKind, f64)>,
    inner_axis: AxisKind,
    inner_values: &[f64],
) -> Vec<SweepRow> {
    // label continuation runs along the innermost axis
    let mut reference: Option<LabelReference> = None;
    inner_values
        .iter()
        .map(|&v| {
            let mut axes = Vec::new();
            let mut axis_values = Vec::new();
            if let Some((k, ov)) = outer {
                axes.push((k, ov));
                axis_values.push(ov);
            }
            axes.push((inner_axis, v));
            axis_values.push(v);
            let (zeta_exact, flagged) = match drive_at(cfg, &axes)
                .and_then(|d| zz_rate_with_reference(&cfg.system, &d, reference.as_ref()))
            {
                Ok((point, next)) => {
                    reference = Some(next);
                    (point.zeta_mhz, point.spectrum.flagged)
                }
                Err(_) => (f64::NAN, true),
            };
            let zeta_pt = drive_at(cfg, &axes)
                .and_then(|d| zeta_pt_total(&cfg.system, &d))
                .unwrap_or(f64::NAN);
            SweepRow {
                axis_values,
                zeta_exact,
                zeta_pt,
                flagged,
            }
        })
        .collect()
}

pub fn cmd_zz_sweep(cfg: &RunConfig, out_dir: &Path, jobs: usize) -> Result<()> {
    let sweep = cfg
        .sweep
        .as_ref()
        .context("zz-sweep requires a `sweep` section in the config")?;
    let axes: Vec<(AxisKind, &SweepAxis)> = sweep
        .axes
        .iter()
        .map(|a| Ok((AxisKind::parse(&a.name)?, a)))
        .collect::<Result<_>>()?;

    let rows: Vec<SweepRow> = match axes.as_slice() {
        [(inner_kind, inner)] => sweep_line(cfg, None, *inner_kind, &inner.values()),
        [(outer_kind, outer), (inner_kind, inner)] => {
            let outer_values = outer.values();
            let inner_values = inner.values();
            outer_values
                .par_iter()
                .map(|&ov| sweep_line(cfg, Some((*outer_kind, ov)), *inner_kind, &inner_values))
                .flatten()
                .collect()
        }
        _ => unreachable!("config validation enforces 1 or 2 axes"),
    };

    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("zz_sweep.csv");
    let mut buf = Vec::new();
    let header: Vec<&str> = sweep.axes.iter().map(|a| a.name.as_str()).collect();
    writeln!(buf, "{},zeta_exact_mhz,zeta_pt_mhz,flag", header.join(","))?;
    let mut flagged = 0usize;
    for row in &rows {
        let axis_cols: Vec<String> = row.axis_values.iter().map(|&v| fmt_sig(v)).collect();
        writeln!(
            buf,
            "{},{},{},{}",
            axis_cols.join(","),
            if row.zeta_exact.is_nan() {
                "nan".into()
            } else {
                fmt_sig(row.zeta_exact)
            },
            if row.zeta_pt.is_nan() {
                "nan".into()
            } else {
                fmt_sig(row.zeta_pt)
            },
            u8::from(row.flagged)
        )?;
        flagged += usize::from(row.flagged);
    }
    write_file(&csv_path, &buf)?;

    let mut manifest = Manifest::new("zz-sweep", jobs).with_config(cfg)?;
    manifest.flagged_points = flagged;
    manifest.add_output(&csv_path);
    manifest.write(&out_dir.join("zz_sweep.manifest.json"))?;
    println!(
        "zz-sweep: {} points ({} flagged) -> {}",
        rows.len(),
        flagged,
        csv_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate

#[derive(Serialize)]
struct CalibrateReport {
    best_amp: f64,
    best_freq_mhz: f64,
    best_r: f64,
    band_mhz: f64,
    band_threshold: f64,
    refined_amp: f64,
    conditional_phase_rad: f64,
    phi_zi_rad: f64,
    phi_iz_rad: f64,
    gate_fidelity: f64,
    /// Row-major computational-block entries as [re, im] pairs.
    compiled_gate: Vec<Vec<[f64; 2]>>,
}

pub fn cmd_calibrate(
    cfg: &RunConfig,
    out_dir: &Path,
    jobs: usize,
    fine_step_ns: f64,
    map_step_ns: f64,
) -> Result<()> {
    let shape = cfg
        .pulse
        .context("calibrate requires a `pulse` section in the config")?;
    let sweep = cfg
        .sweep
        .as_ref()
        .context("calibrate requires a `sweep` section with amp_global and drive_freq axes")?;
    let mut amplitudes = None;
    let mut freqs = None;
    for axis in &sweep.axes {
        match AxisKind::parse(&axis.name)? {
            AxisKind::AmpGlobal => amplitudes = Some(axis.values()),
            AxisKind::DriveFreq => freqs = Some(axis.values()),
            other => bail!("calibrate grid cannot sweep {other:?}; use amp_global and drive_freq"),
        }
    }
    let (amplitudes, freqs) = match (amplitudes, freqs) {
        (Some(a), Some(f)) => (a, f),
        _ => bail!("calibrate needs both an amp_global axis and a drive_freq axis"),
    };

    let settings = CalibrationSettings {
        sweep: RSweepSettings {
            crosstalk: cfg.crosstalk_or_identity(),
            scale: cfg.scale_mhz_per_unit,
            phi_d: cfg.drive.phi_d,
            shape: PulseShape::new(shape.total_ns, shape.flat_fraction)?,
            step_ns: map_step_ns,
        },
        fine_step_ns,
        required_r: 1.5,
        band_r: 1.9,
    };
    let report = calibrate_cz(&cfg.system, &settings, &amplitudes, &freqs)?;

    std::fs::create_dir_all(out_dir)?;
    let map_path = out_dir.join("r_map.csv");
    let mut buf = Vec::new();
    report.r_map.write_csv(&mut buf)?;
    write_file(&map_path, &buf)?;

    let report_path = out_dir.join("calibrate_report.json");
    let compiled_gate = (0..4)
        .map(|i| {
            (0..4)
                .map(|j| {
                    let v = report.compiled_gate[(i, j)];
                    [v.re, v.im]
                })
                .collect()
        })
        .collect();
    write_report(
        &report_path,
        &CalibrateReport {
            best_amp: report.best_amp,
            best_freq_mhz: report.best_freq_mhz,
            best_r: report.best_r,
            band_mhz: report.band_mhz,
            band_threshold: report.band_threshold,
            refined_amp: report.refined_amp,
            conditional_phase_rad: report.conditional_phase_rad,
            phi_zi_rad: report.phi_zi_rad,
            phi_iz_rad: report.phi_iz_rad,
            gate_fidelity: report.gate_fidelity,
            compiled_gate,
        },
    )?;

    let mut manifest = Manifest::new("calibrate", jobs).with_config(cfg)?;
    manifest.flagged_points = report.r_map.flag_count();
    manifest.add_output(&map_path);
    manifest.add_output(&report_path);
    manifest.write(&out_dir.join("calibrate.manifest.json"))?;
    println!(
        "calibrate: band {:.1} MHz at R >= {:.2}, refined A = {:.4}, gate fidelity {:.6} \
         -> {}",
        report.band_mhz,
        report.band_threshold,
        report.refined_amp,
        report.gate_fidelity,
        report_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

#[derive(clap::Subcommand, Debug)]
pub enum FitKind {
    /// Fit the crosstalk matrix and scale to a measured ZZ sweep.
    Crosstalk {
        /// Sweep CSV with header a_c,a_t,phi_d,zeta_mhz,sigma_mhz.
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit a single exponential decay.
    Rb {
        /// Decay CSV with header m,value.
        #[arg(long)]
        data: PathBuf,
    },
    /// Reference + interleaved decays -> gate fidelity.
    Irb {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        interleaved: PathBuf,
        #[arg(long, default_value_t = 4)]
        dimension: u32,
    },
    /// Per-Pauli decay tables -> process fidelities and gate fidelity.
    Cb {
        /// Label CSV (pauli_label,p,sigma) for the reference cycle.
        #[arg(long)]
        reference: PathBuf,
        /// Label CSV for the interleaved cycle.
        #[arg(long)]
        interleaved: PathBuf,
        #[arg(long, default_value_t = 4)]
        dimension: u32,
    },
    /// Coherent/stochastic split from the decay parameter and unitarity.
    Xrb {
        #[arg(long, conflicts_with_all = ["reference", "purity"])]
        p_rb: Option<f64>,
        #[arg(long, requires = "p_rb")]
        unitarity: Option<f64>,
        /// Reference decay CSV (alternative to --p-rb).
        #[arg(long, requires = "purity")]
        reference: Option<PathBuf>,
        /// Purity decay CSV; its decay parameter is the unitarity.
        #[arg(long)]
        purity: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        dimension: u32,
    },
    /// Leakage rate equations from reference + interleaved |2>-populations.
    Lrb {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        interleaved: PathBuf,
    },
    /// Decoherence-limited process infidelity from T1/T2 and a gate length.
    CoherenceLimit {
        #[arg(long)]
        t1_c_us: f64,
        #[arg(long)]
        t2_c_us: f64,
        #[arg(long)]
        t1_t_us: f64,
        #[arg(long)]
        t2_t_us: f64,
        #[arg(long)]
        gate_len_us: f64,
        #[arg(long, default_value_t = 4)]
        dimension: u32,
    },
}

#[derive(Serialize)]
struct DecayReport {
    amplitude: f64,
    p: f64,
    sigma_amplitude: f64,
    sigma_p: f64,
    clamped: bool,
    chi2: f64,
}

impl From<starkzz::benchmarking::DecayFit> for DecayReport {
    fn from(f: starkzz::benchmarking::DecayFit) -> Self {
        Self {
            amplitude: f.amplitude,
            p: f.p,
            sigma_amplitude: f.sigma_amplitude,
            sigma_p: f.sigma_p,
            clamped: f.clamped,
            chi2: f.chi2,
        }
    }
}

fn load_decay(path: &Path, kind: DecayKind) -> Result<DecayDataset> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    DecayDataset::read_csv(std::io::BufReader::new(file), kind)
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn cmd_fit(
    kind: &FitKind,
    config: Option<&RunConfig>,
    out_dir: &Path,
    jobs: usize,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = Manifest::new("fit", jobs);
    if let Some(cfg) = config {
        manifest = manifest.with_config(cfg)?;
    }
    let (name, report): (&str, serde_json::Value) = match kind {
        FitKind::Crosstalk { data } => {
            let cfg = config.context("fit crosstalk requires --config for the system model")?;
            manifest.add_input(data)?;
            let file =
                std::fs::File::open(data).with_context(|| format!("opening {}", data.display()))?;
            let points = read_sweep_csv(std::io::BufReader::new(file))?;
            let fit = fit_crosstalk(
                &points,
                &cfg.system,
                cfg.drive.drive_freq_mhz,
                &cfg.crosstalk_or_identity(),
                cfg.scale_mhz_per_unit,
            )?;
            ("crosstalk", serde_json::to_value(&fit)?)
        }
        FitKind::Rb { data } => {
            manifest.add_input(data)?;
            let fit = fit_decay(&load_decay(data, DecayKind::Rb)?)?;
            ("rb", serde_json::to_value(DecayReport::from(fit))?)
        }
        FitKind::Irb {
            reference,
            interleaved,
            dimension,
        } => {
            manifest.add_input(reference)?;
            manifest.add_input(interleaved)?;
            let f_ref = fit_decay(&load_decay(reference, DecayKind::Rb)?)?;
            let f_int = fit_decay(&load_decay(interleaved, DecayKind::Irb)?)?;
            let est = interleaved_fidelity(f_ref.p, f_int.p, *dimension)?;
            (
                "irb",
                serde_json::json!({
                    "reference": DecayReport::from(f_ref),
                    "interleaved": DecayReport::from(f_int),
                    "dimension": dimension,
                    "gate_error": est.gate_error,
                    "fidelity": est.fidelity,
                    "warned": est.warned,
                }),
            )
        }
        FitKind::Cb {
            reference,
            interleaved,
            dimension,
        } => {
            manifest.add_input(reference)?;
            manifest.add_input(interleaved)?;
            let open = |p: &Path| -> Result<_> {
                let f =
                    std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
                Ok(read_cb_csv(std::io::BufReader::new(f))?)
            };
            let labels_ref = open(reference)?;
            let labels_int = open(interleaved)?;
            let ref_analysis = cb_analyze(&labels_ref, *dimension)?;
            let int_analysis = cb_analyze(&labels_int, *dimension)?;
            let est = interleaved_fidelity(ref_analysis.average_p, int_analysis.average_p, *dimension)?;
            (
                "cb",
                serde_json::json!({
                    "reference": ref_analysis,
                    "interleaved": int_analysis,
                    "dimension": dimension,
                    "gate_error": est.gate_error,
                    "fidelity": est.fidelity,
                    "warned": est.warned,
                }),
            )
        }
        FitKind::Xrb {
            p_rb,
            unitarity,
            reference,
            purity,
            dimension,
        } => {
            let (p, u) = match (p_rb, unitarity, reference, purity) {
                (Some(p), Some(u), _, _) => (*p, *u),
                (None, None, Some(r), Some(q)) => {
                    manifest.add_input(r)?;
                    manifest.add_input(q)?;
                    let f_ref = fit_decay(&load_decay(r, DecayKind::Rb)?)?;
                    let f_pur = fit_decay(&load_decay(q, DecayKind::Purity)?)?;
                    (f_ref.p, f_pur.p)
                }
                _ => bail!("fit xrb needs either --p-rb with --unitarity, or --reference with --purity"),
            };
            let budget: ErrorBudget = xrb_decompose(p, u, *dimension)?;
            ("xrb", serde_json::to_value(budget)?)
        }
        FitKind::Lrb {
            reference,
            interleaved,
        } => {
            manifest.add_input(reference)?;
            manifest.add_input(interleaved)?;
            let r_ref = lrb_fit(&load_decay(reference, DecayKind::LeakagePop)?)?;
            let r_int = lrb_fit(&load_decay(interleaved, DecayKind::LeakagePop)?)?;
            let (per_gate, floored) = leakage_per_gate(r_int.gamma_up, r_ref.gamma_up)?;
            (
                "lrb",
                serde_json::json!({
                    "reference": r_ref,
                    "interleaved": r_int,
                    "leakage_per_gate": per_gate,
                    "floored": floored,
                }),
            )
        }
        FitKind::CoherenceLimit {
            t1_c_us,
            t2_c_us,
            t1_t_us,
            t2_t_us,
            gate_len_us,
            dimension,
        } => {
            let limit = coherence_limit(
                *t1_c_us, *t2_c_us, *t1_t_us, *t2_t_us, *gate_len_us, *dimension,
            )?;
            ("coherence-limit", serde_json::to_value(limit)?)
        }
    };

    let report_path = out_dir.join(format!("fit_{name}_report.json"));
    let wrapped = serde_json::json!({
        "kind": name,
        "inputs": manifest.inputs,
        "result": report,
    });
    write_report(&report_path, &wrapped)?;
    manifest.command = format!("fit {name}");
    manifest.add_output(&report_path);
    manifest.write(&out_dir.join(format!("fit_{name}.manifest.json")))?;
    println!("fit {name}: report -> {}", report_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    model: &str,
    a: f64,
    p: Option<f64>,
    b: Option<f64>,
    gamma: Option<f64>,
    lengths: &str,
    shots: u32,
    exact: bool,
    samples: usize,
    seed: u64,
    out_file: &Path,
    jobs: usize,
) -> Result<()> {
    let model = match model {
        "exponential" => SynthModel::Exponential {
            a,
            p: p.context("--p is required for the exponential model")?,
        },
        "leakage" => SynthModel::Leakage {
            a,
            b: b.context("--b is required for the leakage model")?,
            gamma: gamma.context("--gamma is required for the leakage model")?,
        },
        other => bail!("unknown model `{other}`; expected exponential or leakage"),
    };
    let lengths: Vec<u32> = lengths
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .with_context(|| format!("bad sequence length `{s}`"))
        })
        .collect::<Result<_>>()?;
    let sampling = if exact {
        Sampling::Exact
    } else {
        Sampling::Shots(shots)
    };
    let data = synth_decay(&model, &lengths, samples, sampling, seed)?;
    if let Some(parent) = out_file.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_file(out_file, &buf)?;

    let mut manifest = Manifest::new("synth", jobs);
    manifest.seed = Some(seed);
    manifest.config = Some(serde_json::json!({
        "model": model,
        "lengths": lengths,
        "sampling": sampling,
        "samples_per_length": samples,
    }));
    manifest.add_output(out_file);
    manifest.write(&out_file.with_extension("manifest.json"))?;
    println!("synth: {} rows -> {}", lengths.len() * samples, out_file.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ramsey

pub fn cmd_ramsey(
    cfg: &RunConfig,
    out_dir: &Path,
    jobs: usize,
    t_max_ns: Option<f64>,
    points: Option<usize>,
) -> Result<()> {
    let drive = drive_at(cfg, &[])?;
    // grid defaults: span ~2.2 periods of the predicted shift, sampled at
    // 5 ns so the off-resonant nutation stays resolved
    let predicted = zz_rate(&cfg.system, &drive)?;
    let t_max = t_max_ns.unwrap_or_else(|| {
        if predicted.abs() > 1e-6 {
            (2.2 / predicted.abs() * 1000.0).min(50_000.0)
        } else {
            10_000.0
        }
    });
    let n = points.unwrap_or_else(|| ((t_max / 5.0).ceil() as usize).clamp(96, 4096));
    let times: Vec<f64> = (0..n).map(|k| k as f64 * t_max / (n - 1) as f64).collect();
    let trace = ramsey_trace(&cfg.system, &drive, &times)?;

    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("ramsey.csv");
    let mut buf = Vec::new();
    writeln!(buf, "t_ns,phase0_rad,phase1_rad")?;
    for (i, &t) in trace.times_ns.iter().enumerate() {
        writeln!(
            buf,
            "{},{},{}",
            fmt_sig(t),
            fmt_sig(trace.phase0_rad[i]),
            fmt_sig(trace.phase1_rad[i])
        )?;
    }
    write_file(&csv_path, &buf)?;

    let report_path = out_dir.join("ramsey_report.json");
    write_report(
        &report_path,
        &serde_json::json!({
            "zeta_mhz": trace.zeta_mhz,
            "predicted_zeta_mhz": predicted,
            "points": n,
            "t_max_ns": t_max,
        }),
    )?;

    let mut manifest = Manifest::new("ramsey", jobs).with_config(cfg)?;
    manifest.add_output(&csv_path);
    manifest.add_output(&report_path);
    manifest.write(&out_dir.join("ramsey.manifest.json"))?;
    println!(
        "ramsey: zeta = {:+.5} MHz over {} points -> {}",
        trace.zeta_mhz,
        n,
        csv_path.display()
    );
    Ok(())
}

