//! Run configuration: JSON schema, loading, and CLI overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use starkzz::crosstalk::CrosstalkMatrix;
use starkzz::dynamics::PulseShape;
use starkzz::SystemParams;

/// One swept parameter. `name` must be one of `phi_d`, `amp_c`, `amp_t`,
/// `amp_global`, `drive_freq`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepAxis {
    pub name: String,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl SweepAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        (0..self.count)
            .map(|k| {
                self.start + (self.stop - self.start) * k as f64 / (self.count - 1) as f64
            })
            .collect()
    }
}

/// The parameter a sweep axis varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisKind {
    PhiD,
    AmpC,
    AmpT,
    AmpGlobal,
    DriveFreq,
}

impl AxisKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "phi_d" => Self::PhiD,
            "amp_c" => Self::AmpC,
            "amp_t" => Self::AmpT,
            "amp_global" => Self::AmpGlobal,
            "drive_freq" => Self::DriveFreq,
            other => bail!(
                "unknown sweep axis `{other}`; expected one of phi_d, amp_c, amp_t, \
                 amp_global, drive_freq"
            ),
        })
    }
}

/// Baseline drive point in device units, mapped to fields through the
/// crosstalk model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DrivePoint {
    pub drive_freq_mhz: f64,
    #[serde(default)]
    pub amp_c: f64,
    #[serde(default)]
    pub amp_t: f64,
    #[serde(default)]
    pub phi_d: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSection {
    pub axes: Vec<SweepAxis>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Only `csv` is supported.
    pub format: Option<String>,
}

/// Top-level configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemParams,
    #[serde(default)]
    pub crosstalk: Option<CrosstalkMatrix>,
    /// MHz of on-chip field per device unit of line amplitude.
    #[serde(default = "default_scale")]
    pub scale_mhz_per_unit: f64,
    #[serde(default)]
    pub pulse: Option<PulseShape>,
    pub drive: DrivePoint,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_scale() -> f64 {
    1.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate().map_err(anyhow::Error::new)?;
        if let Some(xt) = &self.crosstalk {
            CrosstalkMatrix::new(xt.c_ct, xt.phi_ct, xt.c_tc, xt.phi_tc, xt.theta_c)
                .map_err(anyhow::Error::new)?;
        }
        if !(self.scale_mhz_per_unit > 0.0) {
            bail!("scale_mhz_per_unit must be > 0");
        }
        if let Some(p) = &self.pulse {
            PulseShape::new(p.total_ns, p.flat_fraction).map_err(anyhow::Error::new)?;
        }
        if !(self.drive.drive_freq_mhz > 0.0) {
            bail!("drive.drive_freq_mhz must be > 0");
        }
        if let Some(sweep) = &self.sweep {
            if sweep.axes.is_empty() || sweep.axes.len() > 2 {
                bail!("sweep must use 1 or 2 axes, got {}", sweep.axes.len());
            }
            for axis in &sweep.axes {
                AxisKind::parse(&axis.name)?;
                if axis.count < 1 {
                    bail!("axis `{}`: count must be >= 1", axis.name);
                }
            }
        }
        if let Some(f) = &self.output.format {
            if f != "csv" {
                bail!("unsupported output format `{f}`; only csv is available");
            }
        }
        Ok(())
    }

    pub fn crosstalk_or_identity(&self) -> CrosstalkMatrix {
        self.crosstalk.unwrap_or_else(CrosstalkMatrix::identity)
    }

    /// Apply command-line overrides on top of the file values.
    pub fn apply_overrides(&mut self, levels: Option<usize>) {
        if let Some(l) = levels {
            self.system.control.levels = l;
            self.system.target.levels = l;
        }
    }
}
