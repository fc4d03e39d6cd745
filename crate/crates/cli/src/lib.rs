//! The `lce` command-line driver.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "LCE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lce", version, about = "Blind super-resolution by learning correction errors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Config file of `key=value` lines; may repeat, later files win.
    #[arg(long = "config", value_name = "FILE")]
    pub files: Vec<PathBuf>,
    /// Override a single key; applied after all files.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Bicubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Fft,
    Grad,
    Kernels,
    Params,
    Metrics,
    Analysis,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize (HR, LR, CLR) triplets with their kernels and a manifest.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory of HR PNGs to crop from; procedural images without it.
        #[arg(long)]
        hr: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        /// isotropic | anisotropic
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the corrector, or the super resolver on top of a trained one.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// corrector | sr
        #[arg(long)]
        stage: String,
        /// case1 | case2 | case3
        #[arg(long)]
        mode: Option<String>,
        /// Ablation: train each listed mode into `<out>/<mode>` and tabulate.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out set for the ablation table; defaults to the training data.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trained corrector checkpoint (required for case2 and case3).
        #[arg(long)]
        corrector: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// PSNR/SSIM on the Y channel for a checkpoint or a baseline.
    Eval {
        /// Corrector or SR checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Directory for the metrics TSV; printed to stdout without it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one output PNG per input image here.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Statistics of corrector errors, with the LR/CLR gap for reference.
    Analyze {
        #[arg(long)]
        corrector: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// SR checkpoint whose activations are exported.
        #[arg(long)]
        features_from: Option<PathBuf>,
        /// Tap names to export, comma separated.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<String>,
        /// Dataset index used for the feature export.
        #[arg(long, default_value_t = 0)]
        image: usize,
    },
    /// Run the self-verification suites.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Parameter and mult-add counts of a configuration.
    Info {
        #[command(flatten)]
        config: ConfigArgs,
        /// LR input height for the mult-add count.
        #[arg(long, default_value_t = 180)]
        height: usize,
        #[arg(long, default_value_t = 320)]
        width: usize,
    },
}

/// Reads the thread cap from the environment and sizes the pool.
pub fn init_threads_from_env() -> CliResult<()> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
            lce_core::par::init_threads(n);
            Ok(())
        }
        _ => Ok(()),
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    commands::dispatch(cli.command, out)
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit code. Errors go to stderr.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = init_threads_from_env().and_then(|_| execute(cli, out));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
