//! Configuration-driven front end for the ZZ-interaction toolkit: parameter
//! sweeps, CZ calibration, crosstalk and benchmarking fits, synthetic
//! dataset generation, and simulated Ramsey runs. Outputs are CSV tables plus
//! a JSON manifest beside each run.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use manifest::resolve_out_dir;

#[derive(Parser, Debug)]
#[command(
    name = "starkzz",
    version,
    about = "Tunable-ZZ transmon simulation and analysis toolkit"
)]
struct Cli {
    /// Output directory (default: config `output.dir`, then $STARKZZ_OUT_DIR,
    /// then the working directory).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,

    /// RNG seed for commands that sample.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Override the per-transmon level truncation from the config.
    #[arg(long, global = true)]
    levels: Option<usize>,

    /// Time step for pulse propagation, ns.
    #[arg(long, global = true, default_value_t = 0.05)]
    step_ns: f64,

    /// Worker threads for sweep evaluation (default: all available).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep the ZZ rate over drive parameters; emits exact and perturbative
    /// values per grid point.
    ZzSweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the R-metric calibration sweep and compile a CZ gate.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Step used for the R-map grid, ns.
        #[arg(long, default_value_t = 0.5)]
        map_step_ns: f64,
    },
    /// Fit measured datasets: crosstalk, rb, irb, cb, xrb, lrb, or the
    /// coherence limit.
    Fit {
        /// Config file (required by `crosstalk` for the system model).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(subcommand)]
        kind: commands::FitKind,
    },
    /// Generate a synthetic decay dataset.
    Synth {
        /// Model: exponential (A·p^m) or leakage (B − A·e^(−Γm)).
        #[arg(long)]
        model: String,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Comma-separated sequence lengths, e.g. 2,16,32.
        #[arg(long)]
        lengths: String,
        #[arg(long, default_value_t = 1000)]
        shots: u32,
        /// Emit exact model values (infinite-shot limit).
        #[arg(long, default_value_t = false)]
        exact: bool,
        /// Samples per sequence length.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a Ramsey run under the configured constant drive and extract
    /// the ZZ rate.
    Ramsey {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        t_max_ns: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
}

fn load_config(path: &PathBuf, levels: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_overrides(levels);
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("configuring worker threads")?;

    match &cli.command {
        Command::ZzSweep { config } => {
            let cfg = load_config(config, cli.levels)?;
            let out = resolve_out_dir(cli.output.as_deref(), cfg.output.dir.as_deref());
            commands::cmd_zz_sweep(&cfg, &out, jobs)
        }
        Command::Calibrate {
            config,
            map_step_ns,
        } => {
            let cfg = load_config(config, cli.levels)?;
            let out = resolve_out_dir(cli.output.as_deref(), cfg.output.dir.as_deref());
            commands::cmd_calibrate(&cfg, &out, jobs, cli.step_ns, *map_step_ns)
        }
        Command::Fit { config, kind } => {
            let cfg = config
                .as_ref()
                .map(|p| load_config(p, cli.levels))
                .transpose()?;
            let out = resolve_out_dir(
                cli.output.as_deref(),
                cfg.as_ref().and_then(|c| c.output.dir.as_deref()),
            );
            commands::cmd_fit(kind, cfg.as_ref(), &out, jobs)
        }
        Command::Synth {
            model,
            a,
            p,
            b,
            gamma,
            lengths,
            shots,
            exact,
            samples,
            out,
        } => commands::cmd_synth(
            model, *a, *p, *b, *gamma, lengths, *shots, *exact, *samples, cli.seed, out, jobs,
        ),
        Command::Ramsey {
            config,
            t_max_ns,
            points,
        } => {
            let cfg = load_config(config, cli.levels)?;
            let out = resolve_out_dir(cli.output.as_deref(), cfg.output.dir.as_deref());
            commands::cmd_ramsey(&cfg, &out, jobs, *t_max_ns, *points)
        }
    }
}
