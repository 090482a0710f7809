//! End-to-end tests of the `starkzz` binary: run subcommands on temp
//! directories and check the emitted CSVs, reports, and manifests.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_starkzz"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawning starkzz");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn pair2_config(drive: serde_json::Value, extra: serde_json::Value) -> serde_json::Value {
    let mut cfg = serde_json::json!({
        "system": {
            "control": { "freq_01": 5469.6, "anharm": -270.5, "levels": 7 },
            "target":  { "freq_01": 5315.0, "anharm": -273.0, "levels": 7 },
            "coupling_j": 2.79
        },
        "drive": drive
    });
    if let (Some(base), Some(add)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in add {
            base.insert(k.clone(), v.clone());
        }
    }
    cfg
}

fn pair1_config(drive: serde_json::Value, extra: serde_json::Value) -> serde_json::Value {
    let mut cfg = serde_json::json!({
        "system": {
            "control": { "freq_01": 5845.0, "anharm": -244.1, "levels": 7 },
            "target":  { "freq_01": 5690.0, "anharm": -247.1, "levels": 7 },
            "coupling_j": 3.45
        },
        "drive": drive
    });
    if let (Some(base), Some(add)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in add {
            base.insert(k.clone(), v.clone());
        }
    }
    cfg
}

fn write_config(dir: &Path, cfg: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.to_string()).collect())
        .collect()
}

#[test]
fn zz_sweep_single_static_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pair2_config(
        serde_json::json!({ "drive_freq_mhz": 5275.0, "amp_c": 0.0, "amp_t": 0.0, "phi_d": 0.0 }),
        serde_json::json!({
            "sweep": { "axes": [ { "name": "phi_d", "start": 0.0, "stop": 0.0, "count": 1 } ] }
        }),
    );
    let cfg_path = write_config(dir.path(), &cfg);
    run_ok(bin()
        .arg("zz-sweep")
        .arg("--config")
        .arg(&cfg_path)
        .arg("-o")
        .arg(dir.path()));
    let rows = read_csv_rows(&dir.path().join("zz_sweep.csv"));
    assert_eq!(rows.len(), 1);
    let zeta: f64 = rows[0][1].parse().unwrap();
    assert!(
        (zeta.abs() - 0.170).abs() / 0.170 < 0.10,
        "|zeta| = {}",
        zeta.abs()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("zz_sweep.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["flagged_points"], 0);
}

#[test]
fn zz_sweep_phase_axis_is_sinusoidal() {
    let dir = tempfile::tempdir().unwrap();
    // identity crosstalk, weak drive: fields are 6 MHz at unit scale... use
    // scale to map device units straight to MHz
    let cfg = pair1_config(
        serde_json::json!({ "drive_freq_mhz": 5650.0, "amp_c": 6.0, "amp_t": 6.0, "phi_d": 0.0 }),
        serde_json::json!({
            "sweep": { "axes": [ { "name": "phi_d", "start": 0.0, "stop": 6.1850105367549055, "count": 64 } ] }
        }),
    );
    let cfg_path = write_config(dir.path(), &cfg);
    run_ok(bin()
        .arg("zz-sweep")
        .arg("--config")
        .arg(&cfg_path)
        .arg("-o")
        .arg(dir.path()));
    let rows = read_csv_rows(&dir.path().join("zz_sweep.csv"));
    assert_eq!(rows.len(), 64);
    // least-squares cosine fit of zeta(phi_d)
    let (mut m, mut rhs) = ([[0.0f64; 3]; 3], [0.0f64; 3]);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    for &(phi, z) in &pts {
        let basis = [1.0, phi.cos(), phi.sin()];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            rhs[i] += basis[i] * z;
        }
    }
    // 3x3 Cramer solve
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d0 = det(&m);
    let mut sol = [0.0f64; 3];
    for k in 0..3 {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = rhs[i];
        }
        sol[k] = det(&mk) / d0;
    }
    let c1 = sol[1].hypot(sol[2]);
    let rms = (pts
        .iter()
        .map(|&(phi, z)| (z - (sol[0] + sol[1] * phi.cos() + sol[2] * phi.sin())).powi(2))
        .sum::<f64>()
        / pts.len() as f64)
        .sqrt();
    assert!(rms < 0.05 * c1, "rms {rms} vs 5% of c1 {c1}");
}

#[test]
fn zz_sweep_across_resonance_flags_and_completes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pair1_config(
        serde_json::json!({ "drive_freq_mhz": 5650.0, "amp_c": 0.0, "amp_t": 0.0, "phi_d": 3.141592653589793 }),
        serde_json::json!({
            "sweep": { "axes": [ { "name": "amp_global", "start": 30.0, "stop": 40.0, "count": 21 } ] }
        }),
    );
    let cfg_path = write_config(dir.path(), &cfg);
    run_ok(bin()
        .arg("zz-sweep")
        .arg("--config")
        .arg(&cfg_path)
        .arg("-o")
        .arg(dir.path()));
    let rows = read_csv_rows(&dir.path().join("zz_sweep.csv"));
    assert_eq!(rows.len(), 21);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("zz_sweep.manifest.json")).unwrap(),
    )
    .unwrap();
    assert!(manifest["flagged_points"].as_u64().unwrap() > 0);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pair2_config(
        serde_json::json!({ "drive_freq_mhz": 5275.0, "amp_c": 5.0, "amp_t": 5.0, "phi_d": 0.0 }),
        serde_json::json!({
            "sweep": { "axes": [
                { "name": "amp_global", "start": 0.0, "stop": 8.0, "count": 3 },
                { "name": "phi_d", "start": 0.0, "stop": 3.0, "count": 5 }
            ] }
        }),
    );
    let cfg_path = write_config(dir.path(), &cfg);
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        run_ok(bin()
            .current_dir(dir.path())
            .arg("zz-sweep")
            .arg("--config")
            .arg(&cfg_path)
            .arg("-o")
            .arg("."));
        snapshots.push((
            std::fs::read(dir.path().join("zz_sweep.csv")).unwrap(),
            std::fs::read(dir.path().join("zz_sweep.manifest.json")).unwrap(),
        ));
    }
    assert_eq!(snapshots[0].0, snapshots[1].0);
    assert_eq!(snapshots[0].1, snapshots[1].1);
}

#[test]
fn synth_then_irb_fit_reproduces_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    for (name, p) in [("ref.csv", 0.9744), ("int.csv", 0.9672)] {
        run_ok(bin()
            .arg("synth")
            .arg("--model")
            .arg("exponential")
            .arg("--a")
            .arg("0.9")
            .arg("--p")
            .arg(p.to_string())
            .arg("--lengths")
            .arg("2,8,16,24,32")
            .arg("--exact")
            .arg("--out")
            .arg(dir.path().join(name)));
    }
    run_ok(bin()
        .arg("fit")
        .arg("-o")
        .arg(dir.path())
        .arg("irb")
        .arg("--reference")
        .arg(dir.path().join("ref.csv"))
        .arg("--interleaved")
        .arg(dir.path().join("int.csv")));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fit_irb_report.json")).unwrap(),
    )
    .unwrap();
    let f = report["result"]["fidelity"].as_f64().unwrap();
    assert!((f - 0.9944).abs() < 2e-4, "F = {f}");
    // manifest carries the input digests
    assert_eq!(report["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn cb_fit_reproduces_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let labels = ["XX", "XY", "YX", "ZZ"];
    let write_labels = |name: &str, p: f64| {
        let mut text = String::from("pauli_label,p,sigma\n");
        for l in labels {
            text.push_str(&format!("{l},{p},0.0001\n"));
        }
        std::fs::write(dir.path().join(name), text).unwrap();
    };
    write_labels("id_labels.csv", 0.99702);
    write_labels("cz_labels.csv", 0.98937);
    run_ok(bin()
        .arg("fit")
        .arg("-o")
        .arg(dir.path())
        .arg("cb")
        .arg("--reference")
        .arg(dir.path().join("id_labels.csv"))
        .arg("--interleaved")
        .arg(dir.path().join("cz_labels.csv")));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fit_cb_report.json")).unwrap(),
    )
    .unwrap();
    let f = report["result"]["fidelity"].as_f64().unwrap();
    assert!((f - 0.9943).abs() < 2e-4, "F = {f}");
}

#[test]
fn malformed_csv_reports_location_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "m,value\n2,0.9\n16,not_a_number\n").unwrap();
    let out = bin()
        .arg("fit")
        .arg("-o")
        .arg(dir.path())
        .arg("rb")
        .arg("--data")
        .arg(dir.path().join("bad.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

#[test]
fn xrb_fit_from_scalars() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .arg("fit")
        .arg("-o")
        .arg(dir.path())
        .arg("xrb")
        .arg("--p-rb")
        .arg("0.9744")
        .arg("--unitarity")
        .arg("0.9559")
        .arg("--dimension")
        .arg("4"));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("fit_xrb_report.json")).unwrap(),
    )
    .unwrap();
    let e_f = report["result"]["e_f"].as_f64().unwrap();
    let e_s = report["result"]["e_s"].as_f64().unwrap();
    let e_u = report["result"]["e_u"].as_f64().unwrap();
    assert!((e_f - (e_s + e_u)).abs() < 1e-12);
}

#[test]
fn calibrate_zero_amplitude_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pair2_config(
        serde_json::json!({ "drive_freq_mhz": 5275.0, "amp_c": 0.0, "amp_t": 0.0, "phi_d": 3.141592653589793 }),
        serde_json::json!({
            "scale_mhz_per_unit": 25.0,
            "pulse": { "total_ns": 201.0, "flat_fraction": 0.4 },
            "sweep": { "axes": [
                { "name": "amp_global", "start": 0.0, "stop": 0.02, "count": 2 },
                { "name": "drive_freq", "start": 5270.0, "stop": 5280.0, "count": 2 }
            ] }
        }),
    );
    let cfg_path = write_config(dir.path(), &cfg);
    let out = bin()
        .arg("calibrate")
        .arg("--config")
        .arg(&cfg_path)
        .arg("-o")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("calibration failure"), "stderr: {stderr}");
}

#[test]
fn calibrate_small_grid_compiles_a_gate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pair2_config(
        serde_json::json!({ "drive_freq_mhz": 5275.0, "amp_c": 1.0, "amp_t": 1.0, "phi_d": 3.141592653589793 }),
        serde_json::json!({
            "scale_mhz_per_unit": 25.0,
            "crosstalk": { "c_ct": 0.0, "phi_ct": 0.0, "c_tc": 0.0, "phi_tc": 0.0, "theta_c": 0.0 },
            "pulse": { "total_ns": 201.0, "flat_fraction": 0.4 },
            "sweep": { "axes": [
                { "name": "amp_global", "start": 1.0, "stop": 1.2, "count": 3 },
                { "name": "drive_freq", "start": 5270.0, "stop": 5280.0, "count": 3 }
            ] }
        }),
    );
    let cfg_path = write_config(dir.path(), &cfg);
    run_ok(bin()
        .arg("calibrate")
        .arg("--config")
        .arg(&cfg_path)
        .arg("-o")
        .arg(dir.path())
        .arg("--step-ns")
        .arg("0.25")
        .arg("--map-step-ns")
        .arg("1.0"));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("calibrate_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["gate_fidelity"].as_f64().unwrap() > 0.99);
    assert!(report["best_r"].as_f64().unwrap() > 1.9);
    let rows = read_csv_rows(&dir.path().join("r_map.csv"));
    assert_eq!(rows.len(), 9);
}

#[test]
fn ramsey_reports_static_zz() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pair2_config(
        serde_json::json!({ "drive_freq_mhz": 5275.0, "amp_c": 0.0, "amp_t": 0.0, "phi_d": 0.0 }),
        serde_json::json!({}),
    );
    let cfg_path = write_config(dir.path(), &cfg);
    run_ok(bin()
        .arg("ramsey")
        .arg("--config")
        .arg(&cfg_path)
        .arg("-o")
        .arg(dir.path()));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("ramsey_report.json")).unwrap(),
    )
    .unwrap();
    let zeta = report["zeta_mhz"].as_f64().unwrap();
    assert!((zeta.abs() - 0.170).abs() / 0.170 < 0.10, "zeta = {zeta}");
    let rows = read_csv_rows(&dir.path().join("ramsey.csv"));
    assert!(rows.len() >= 96);
}

#[test]
fn synth_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        run_ok(bin()
            .arg("--seed")
            .arg("7")
            .arg("synth")
            .arg("--model")
            .arg("exponential")
            .arg("--a")
            .arg("0.9")
            .arg("--p")
            .arg("0.9744")
            .arg("--lengths")
            .arg("2,16,32")
            .arg("--shots")
            .arg("1000")
            .arg("--samples")
            .arg("3")
            .arg("--out")
            .arg(dir.path().join(name)));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_sweep_axis_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pair2_config(
        serde_json::json!({ "drive_freq_mhz": 5275.0 }),
        serde_json::json!({
            "sweep": { "axes": [ { "name": "detuning", "start": 0.0, "stop": 1.0, "count": 4 } ] }
        }),
    );
    let cfg_path = write_config(dir.path(), &cfg);
    let out = bin()
        .arg("zz-sweep")
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("detuning"), "stderr: {stderr}");
}
