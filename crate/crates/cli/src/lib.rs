//! Command-line front end: dataset files, configuration and benchmark runs.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use xstereo::matching::MatchMode;

use config::{Config, Preset};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] xstereo::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(path.to_path_buf())
        } else {
            CliError::Io { path: path.to_path_buf(), source }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "xstereo", version, about = "Gated + RCCB cross-spectral stereo depth toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true, env = "XSTEREO_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "XSTEREO_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "XSTEREO_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "XSTEREO_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    /// Matching modes (default: all three).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub mode: Vec<CliMode>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CliMode {
    GatedOnly,
    RccbOnly,
    Fused,
}

impl From<CliMode> for MatchMode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::GatedOnly => MatchMode::GatedOnly,
            CliMode::RccbOnly => MatchMode::RccbOnly,
            CliMode::Fused => MatchMode::Fused,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset.
    Simulate {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Decode depth from the gated slices of a dataset.
    Decode {
        #[arg(long)]
        data: PathBuf,
    },
    /// Estimate stereo depth for a dataset.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        matching: MatchArgs,
    },
    /// Score estimates against ground truth.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `estimate`.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',')]
        mode: Vec<CliMode>,
    },
    /// Simulate, estimate and evaluate every preset and mode.
    Benchmark {
        #[arg(long)]
        frames: Option<usize>,
        #[command(flatten)]
        matching: MatchArgs,
    },
}

fn modes(cfg: &Config, flags: &[CliMode]) -> Vec<MatchMode> {
    if flags.is_empty() {
        cfg.benchmark.modes.clone()
    } else {
        flags.iter().map(|&m| m.into()).collect()
    }
}

fn apply_match_args(cfg: &mut Config, m: &MatchArgs) -> Result<(), CliError> {
    if let Some(i) = m.iterations {
        cfg.matching.iterations = i;
    }
    if let Some(l) = m.levels {
        cfg.matching.pyramid_levels = l;
    }
    if !m.mode.is_empty() {
        cfg.benchmark.modes = m.mode.iter().map(|&x| x.into()).collect();
    }
    cfg.validate().map_err(CliError::Config)
}

/// Resolves the configuration and runs one subcommand inside a thread pool of
/// the requested size.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = Config::load(cli.common.config.as_deref())?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.common.threads {
        cfg.threads = t;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let out = cli.common.out;
    pool.install(|| match cli.command {
        Command::Simulate { preset, frames } => {
            if let Some(p) = preset {
                cfg.sim.preset = p;
            }
            if let Some(n) = frames {
                cfg.sim.frames = n;
            }
            commands::simulate(&cfg, cfg.sim.preset, &out).map(|_| ())
        }
        Command::Decode { data } => commands::decode(&cfg, &data, &out).map(|_| ()),
        Command::Estimate { data, matching } => {
            apply_match_args(&mut cfg, &matching)?;
            commands::estimate(&cfg, &data, &out, &cfg.benchmark.modes)
        }
        Command::Evaluate { data, pred, mode } => {
            let ev = commands::evaluate(&cfg, &data, &pred, &modes(&cfg, &mode))?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
            dataset::write_json(&out.join("evaluation.json"), &ev)
        }
        Command::Benchmark { frames, matching } => {
            if let Some(n) = frames {
                cfg.sim.frames = n;
            }
            apply_match_args(&mut cfg, &matching)?;
            let report = commands::benchmark(&cfg, &out)?;
            print!("{}", report.table());
            Ok(())
        }
    })
}
