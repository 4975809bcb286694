//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_file, parse_override, ConfigError, Entry, ExperimentConfig, ExperimentKind, Origin};
use crate::error::{CliError, CliResult};
use crate::experiment::{read_sweep, emit_sweep_plots, run_sample_sweep, run_synthetic, RunOptions};
use crate::output;
use crate::selftest::run_selftest;
use crate::vessel::run_vessel;

/// Environment variable naming the output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "LSRTR_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "lsrtr", version, about = "Low-separation-rank tensor regression experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Trial ensemble on synthetic data at a fixed sample size.
    Synth(RunArgs),
    /// Final errors across training sample sizes.
    Sweep(RunArgs),
    /// Classification on the VesselMNIST3D archive.
    Vessel(RunArgs),
    /// Rebuild aggregates and plot data from a previous run directory.
    Plotdata {
        /// Directory holding trajectories.csv or sweep.csv.
        input: PathBuf,
        /// Destination; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient and Newton–Schulz oracle checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    /// lsrtr, lsrtr-m or both.
    #[arg(long)]
    pub algo: Option<String>,
    /// Run trials sequentially and record wall-clock time.
    #[arg(long)]
    pub timing: bool,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, short)]
    pub quiet: bool,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => {
            let (cfg, out, opts) = prepare(ExperimentKind::Synthetic, &a)?;
            run_synthetic(&cfg, &out, opts).map(drop)
        }
        Command::Sweep(a) => {
            let (cfg, out, opts) = prepare(ExperimentKind::SampleSweep, &a)?;
            run_sample_sweep(&cfg, &out, opts).map(drop)
        }
        Command::Vessel(a) => {
            let (cfg, out, opts) = prepare(ExperimentKind::Vessel, &a)?;
            run_vessel(&cfg, &out, opts).map(drop)
        }
        Command::Plotdata { input, out } => plotdata(&input, out.as_deref().unwrap_or(&input)),
        Command::Selftest => run_selftest(false),
    }
}

/// Config entries in increasing precedence: file, `--set`, dedicated flags.
pub fn collect_entries(kind: ExperimentKind, a: &RunArgs) -> CliResult<Vec<Entry>> {
    let mut entries = match &a.config {
        Some(path) => load_file(path)?,
        None => Vec::new(),
    };
    for (i, s) in a.set.iter().enumerate() {
        entries.push(parse_override(s, i)?);
    }
    for e in entries.iter().filter(|e| e.key == "experiment") {
        let named: ExperimentKind = e.value.parse().map_err(|m: String| ConfigError::Invalid {
            origin: e.origin.clone(),
            message: m,
        })?;
        if named != kind {
            return Err(ConfigError::Invalid {
                origin: e.origin.clone(),
                message: format!("experiment `{}` conflicts with the `{}` command", named.name(), kind.name()),
            }
            .into());
        }
    }
    let flag = |key: &str, value: String, name: &'static str| Entry {
        key: key.into(),
        value,
        origin: Origin::Flag(name),
    };
    entries.push(flag("experiment", kind.name().into(), "command"));
    if let Some(s) = a.seed {
        entries.push(flag("seed", s.to_string(), "seed"));
    }
    if let Some(t) = a.trials {
        entries.push(flag("trials", t.to_string(), "trials"));
    }
    if let Some(algo) = &a.algo {
        entries.push(flag("algo", algo.clone(), "algo"));
    }
    Ok(entries)
}

/// `--out`, then the environment override, then `results/<kind>`.
pub fn output_dir(kind: ExperimentKind, flag: Option<&Path>, env: Option<OsString>) -> PathBuf {
    match (flag, env) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => Path::new("results").join(kind.name()),
    }
}

fn prepare(kind: ExperimentKind, a: &RunArgs) -> CliResult<(ExperimentConfig, PathBuf, RunOptions)> {
    let cfg = ExperimentConfig::resolve(&collect_entries(kind, a)?)?;
    let out = output_dir(kind, a.out.as_deref(), std::env::var_os(OUT_DIR_ENV));
    std::fs::create_dir_all(&out).map_err(CliError::io(&out))?;
    let opts = RunOptions {
        timing: a.timing,
        quiet: a.quiet,
    };
    Ok((cfg, out, opts))
}

/// Regenerates aggregates and panels from `trajectories.csv`, or sweep
/// panels from `sweep.csv`.
pub fn plotdata(input: &Path, out: &Path) -> CliResult<()> {
    let traj = input.join("trajectories.csv");
    let sweep = input.join("sweep.csv");
    let plots = out.join("plots");
    if traj.exists() {
        let records = output::read_trajectories(&traj)?;
        let (agg, warnings) = output::aggregate(&records);
        for w in warnings {
            eprintln!("warning: {w}");
        }
        output::write_aggregates(&out.join("aggregate.csv"), &agg)?;
        let panels = output::emit_plot_data(&plots, &agg, "run")?;
        output::write_plots(&plots, &panels)
    } else if sweep.exists() {
        let rows = read_sweep(&sweep)?;
        let panels = emit_sweep_plots(&plots, &rows, "sweep")?;
        output::write_plots(&plots, &panels)
    } else {
        Err(CliError::Data(format!(
            "{}: no trajectories.csv or sweep.csv",
            input.display()
        )))
    }
}
