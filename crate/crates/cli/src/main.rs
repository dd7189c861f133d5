mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isomerge_core::merge::{MergeMethod, DEFAULT_COMMON_FRACTION};
use isomerge_core::spectral::DEFAULT_EPSILON;

use crate::error::{CliError, CliResult};

const THREADS_ENV: &str = "ISO_MERGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "isomerge", version, about = "Isotropic merging of fine-tuned checkpoints")]
struct Cli {
    /// Worker threads for per-layer work (default: all cores). ISO_MERGE_THREADS overrides it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge task checkpoints into one model.
    Merge(MergeArgs),
    /// Subspace alignment of tasks against a merged model, optionally with NAI.
    Analyze(AnalyzeArgs),
    /// Singular value spectra of 2-D layers.
    Spectrum(SpectrumArgs),
    /// Generate a synthetic suite and benchmark merge methods on it.
    Synth(SynthArgs),
    /// Score a range of scaling factors on a synthetic suite's validation splits.
    SweepAlpha(SweepArgs),
}

#[derive(Debug, Args)]
struct MergeArgs {
    /// avg, ta, iso-c or iso-cts.
    #[arg(long)]
    method: MergeMethod,
    /// Pre-trained checkpoint θ_0.
    #[arg(long)]
    base: PathBuf,
    /// Fine-tuned checkpoints, one per task.
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    tasks: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Share of the rank kept for the common subspace (iso-cts).
    #[arg(long, default_value_t = DEFAULT_COMMON_FRACTION)]
    common_frac: f64,
    /// Merged checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-layer metadata JSON (default: `<out>.meta.json`).
    #[arg(long)]
    meta_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    merged: PathBuf,
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    tasks: Vec<PathBuf>,
    /// Subtract this checkpoint from every input; without it the inputs are task matrices.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// CSV with columns task,acc_merged,acc_task,acc_zero.
    #[arg(long)]
    accuracy: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long)]
    input: PathBuf,
    /// Subtract this checkpoint first, so the spectra are those of the update.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Regular expression selecting layer names.
    #[arg(long, default_value = ".")]
    layers: String,
    /// Interpolate towards the isotropic spectrum: (1 − β)·σ + β·σ̄.
    #[arg(long, conflicts_with = "k")]
    beta: Option<f64>,
    /// Keep the top k directions at the mean singular value.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Uniform,
    Spread,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ActivationArg {
    Identity,
    Relu,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    tasks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
    #[arg(long, value_delimiter = ',', default_value = "avg,ta,iso-c,iso-cts")]
    methods: Vec<MergeMethod>,
    /// Comma list (`0.5,1,1.5`) or range `start:stop:step`.
    #[arg(long)]
    alpha_grid: Option<String>,
    #[arg(long, default_value_t = DEFAULT_COMMON_FRACTION)]
    common_frac: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Directory written by `synth`.
    #[arg(long)]
    suite: PathBuf,
    #[arg(long)]
    method: MergeMethod,
    #[arg(long)]
    alpha_grid: Option<String>,
    #[arg(long, default_value_t = DEFAULT_COMMON_FRACTION)]
    common_frac: f64,
    #[arg(long)]
    out: PathBuf,
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            CliError::input(format!("{THREADS_ENV}: `{v}` is not a thread count"))
        })?),
        Err(_) => flag,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("--threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Merge(a) => commands::merge(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Spectrum(a) => commands::spectrum(a),
        Command::Synth(a) => commands::synth(a),
        Command::SweepAlpha(a) => commands::sweep_alpha(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
