//! Command-line front end. `main` parses arguments with [`parse_args`] and
//! hands the result to [`execute`].

mod commands;
mod config;

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

pub use commands::*;
pub use config::*;

use crate::par;

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "SAW_RECON_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "saw-recon",
    version,
    about = "Cone-beam MBIR with spatially adaptive half/full-scan weighting",
    after_help = "Any config key can be overridden with --section.key=value, e.g. --recon.beta=10 or --acquisition.i0=1e5."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; defaults to $SAW_RECON_THREADS, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory; overrides output.directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the sinogram and the reference-phase ground truth.
    Simulate(CommonArgs),
    /// Compute the half-scan mask and its per-slice area.
    Mask(CommonArgs),
    /// Reconstruct the simulated (or configured) sinogram.
    Reconstruct {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to recon.mode.
        #[arg(long, value_enum)]
        mode: Option<ModeName>,
    },
    /// Per-slice RMSE between two volumes over the support of a reference.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Defaults to the ground truth in the output directory.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Names the output CSV rmse_<name>.csv.
        #[arg(long, default_value = "a_vs_b")]
        name: String,
    },
    /// simulate, mask, all three reconstructions and their comparisons.
    PaperDemo(CommonArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Simulate(c) | Command::Mask(c) | Command::PaperDemo(c) => c,
            Command::Reconstruct { common, .. } | Command::Compare { common, .. } => common,
        }
    }
}

/// Splits `--section.key=value` overrides out of `args` and parses the rest.
pub fn parse_args<I, S>(args: I) -> Result<(Cli, Vec<Override>), ParseError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args.into_iter().map(Into::into) {
        if is_override(&a) {
            overrides.push(Override::parse(&a).map_err(ParseError::Override)?);
        } else {
            rest.push(a);
        }
    }
    let cli = Cli::try_parse_from(rest).map_err(ParseError::Clap)?;
    Ok((cli, overrides))
}

fn is_override(arg: &str) -> bool {
    arg.strip_prefix("--")
        .map(|s| s.split('=').next().unwrap_or("").contains('.'))
        .unwrap_or(false)
}

#[derive(Debug)]
pub enum ParseError {
    Clap(clap::Error),
    Override(anyhow::Error),
}

/// `--threads`, else the environment variable, else 0 (all cores).
pub fn thread_count(flag: Option<usize>) -> anyhow::Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count")),
        _ => Ok(0),
    }
}

fn output_dir(cfg: &RunConfig, common: &CommonArgs) -> PathBuf {
    common.output.clone().unwrap_or_else(|| cfg.output.directory.clone())
}

/// Runs a parsed command; text meant for the user is returned, not printed.
pub fn execute(cli: &Cli, overrides: &[Override]) -> anyhow::Result<String> {
    let common = cli.command.common();
    let cfg = RunConfig::load(&common.config, overrides)?;
    let threads = thread_count(common.threads)?;
    let out = output_dir(&cfg, common);
    par::with_threads(threads, || run_command(&cli.command, &cfg, &out))
}

fn run_command(command: &Command, cfg: &RunConfig, out: &Path) -> anyhow::Result<String> {
    match command {
        Command::Simulate(_) => {
            let s = simulate(cfg, out)?;
            Ok(format!(
                "simulated {} views into {} (reference phase {:.4})",
                s.sinogram.num_views(),
                out.display(),
                s.reference_phase
            ))
        }
        Command::Mask(_) => {
            let m = mask(cfg, out)?;
            let nz = m.dims()[2];
            Ok(format!(
                "mask written to {}; center-slice area {}, edge-slice area {}",
                out.display(),
                m.slice_area(nz / 2),
                m.slice_area(0)
            ))
        }
        Command::Reconstruct { mode, .. } => {
            let mode = mode.unwrap_or(cfg.recon.mode);
            let (_, report) = reconstruct(cfg, mode, out, None)?;
            Ok(format!(
                "{} reconstruction: {} iterations, final cost {:.6e}",
                crate::recon::ReconMode::from(mode).name(),
                report.iterations(),
                report.cost.last().copied().unwrap_or(f64::NAN)
            ))
        }
        Command::Compare { a, b, reference, name, .. } => {
            let reference = reference.clone().unwrap_or_else(|| out.join(GROUND_TRUTH_FILE));
            let (_, line) = compare(cfg, name, a, b, &reference, out)?;
            Ok(line)
        }
        Command::PaperDemo(_) => {
            let s = paper_demo(cfg, out)?;
            Ok(format!("{}finished in {:.1} s", s.text, s.seconds))
        }
    }
}
