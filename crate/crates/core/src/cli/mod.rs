//! The `trajrecon` command line. Exit codes: 0 success, 1 usage or
//! configuration error (nothing is computed), 2 runtime failure.

pub mod config;
mod commands;
mod slices;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::tensor::{write_atomic, Dtype};
use crate::error::{Error, Result};
pub use config::{RunConfig, DESK_CONFIG};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const RUN_RECORD: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "trajrecon", version, about = "Learned shift-variant FBP for cone-beam CT on arbitrary trajectories")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file (`key = value` lines, `#` comments).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: runs/<subcommand>].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single worker thread; results are bit-identical across runs.
    #[arg(long, global = true)]
    sequential: bool,
    /// Storage precision of written tensors (f32 or f64).
    #[arg(long, global = true)]
    precision: Option<Dtype>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate random phantoms and their simulated projections.
    Dataset,
    /// Train the redundancy layer (full or PCA-compressed with `k > 0`).
    Train {
        /// Dataset directory from `dataset`; generated from the config if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Weights to initialize from: a checkpoint directory or a weight tensor.
        #[arg(long)]
        init_weights: Option<PathBuf>,
    },
    /// Reconstruct one projection stack.
    Reconstruct {
        /// Projection tensor shaped [views, n_v, n_u].
        #[arg(long)]
        projections: PathBuf,
        /// Checkpoint directory or weight tensor (default: analytic weights).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Fit PCA to redundancy weights and write the eigenvalue spectrum.
    PcaFit {
        /// Checkpoint directory or weight tensor shaped [views, n_mu, n_s] or [views, bins].
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        k: usize,
    },
    /// Reconstruction quality of the weights against the number of components.
    PcaSweep {
        #[arg(long)]
        weights: PathBuf,
        /// Comma-separated component counts.
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        /// SSIM window (odd).
        #[arg(long, default_value_t = 7)]
        window: usize,
    },
    /// Analytic redundancy weights 1/n from plane-intersection counts.
    Redundancy,
    /// MSE, PSNR and SSIM of a volume against a reference.
    Evaluate {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Dynamic range for PSNR and SSIM (default: range of the reference).
        #[arg(long)]
        range: Option<f64>,
        #[arg(long, default_value_t = 7)]
        window: usize,
        /// Fit `a·volume + b` to the reference before scoring.
        #[arg(long)]
        affine: bool,
    },
    /// Trainable parameter counts with and without compression.
    Params {
        #[arg(long)]
        views: u64,
        #[arg(long)]
        bins: u64,
        /// Comma-separated component counts.
        #[arg(long, value_delimiter = ',')]
        k: Vec<u64>,
    },
    /// Write slices of a volume (and a reference) as PGM and PNG images.
    Slices {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Axis::Z)]
        axis: Axis,
        /// Comma-separated slice indices (default: the middle slice).
        #[arg(long, value_delimiter = ',')]
        index: Vec<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dataset => "dataset",
            Command::Train { .. } => "train",
            Command::Reconstruct { .. } => "reconstruct",
            Command::PcaFit { .. } => "pca-fit",
            Command::PcaSweep { .. } => "pca-sweep",
            Command::Redundancy => "redundancy",
            Command::Evaluate { .. } => "evaluate",
            Command::Params { .. } => "params",
            Command::Slices { .. } => "slices",
        }
    }

    fn uses_config(&self) -> bool {
        matches!(
            self,
            Command::Dataset | Command::Train { .. } | Command::Reconstruct { .. } | Command::Redundancy
        )
    }
}

/// Provenance record written to every output directory.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: Vec<String>,
    config: Option<&'a RunConfig>,
    threads: Option<usize>,
    sequential: bool,
    precision: Dtype,
    status: &'a str,
    error: Option<String>,
}

fn write_record(out: &Path, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(out)?;
    write_atomic(&out.join(RUN_RECORD), serde_json::to_string_pretty(record)?.as_bytes())
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'")));
        };
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(p) = common.precision {
        cfg.precision = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let name = cli.command.name();
    let cfg = if cli.command.uses_config() {
        match load_config(&cli.common) {
            Ok(cfg) => Some(cfg),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        }
    } else {
        None
    };
    let threads = if cli.common.sequential { Some(1) } else { cli.common.threads };
    if threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return EXIT_USAGE;
    }
    let precision = cfg.as_ref().map(|c| c.precision).or(cli.common.precision).unwrap_or(Dtype::Float64);
    let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    let mut record = RunRecord {
        tool: "trajrecon",
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        args: args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        config: cfg.as_ref(),
        threads,
        sequential: cli.common.sequential,
        precision,
        status: "running",
        error: None,
    };
    if let Err(e) = write_record(&out, &record) {
        eprintln!("error: cannot write to {}: {e}", out.display());
        return EXIT_RUNTIME;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let result = builder
        .build()
        .map_err(|e| Error::InvalidState(format!("thread pool: {e}")))
        .and_then(|pool| {
            pool.install(|| {
                let ctx = commands::Context {
                    out: &out,
                    cfg: cfg.as_ref(),
                    precision,
                };
                commands::dispatch(&cli.command, &ctx)
            })
        });
    let code = match &result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    };
    record.status = if code == EXIT_OK { "ok" } else { "failed" };
    record.error = result.err().map(|e| e.to_string());
    if let Err(e) = write_record(&out, &record) {
        eprintln!("error: cannot write {}: {e}", RUN_RECORD);
        return EXIT_RUNTIME;
    }
    code
}
