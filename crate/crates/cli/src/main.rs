//! `latent-probe`: generate phantoms, score images and run the studies.

mod commands;
mod error;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::FloatList;

#[derive(Parser)]
#[command(name = "latent-probe", version, about = "Latent-code corruption scores for image codecs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset (images, organ masks, index.csv).
    Gen(GenArgs),
    /// Write a built-in codec to a model directory.
    InitModel(InitModelArgs),
    /// Score one image: prints `gamma=<v> delta=<v>`, writes the variance heat map.
    Score(ScoreArgs),
    /// Black-patch study over a dataset.
    Perturb(PerturbArgs),
    /// Confidence vs segmentation DICE under graded latent damage.
    Correlate(CorrelateArgs),
    /// Split the ids of a report CSV at a confidence cutoff.
    Filter(FilterArgs),
}

#[derive(Args, Clone)]
pub struct Common {
    /// `key=value` config file or a previous run's manifest; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Clone)]
pub struct ScoringArgs {
    /// Model directory or `builtin:toy-conv`.
    #[arg(long)]
    model: Option<String>,
    /// Noise level: variance multiplier on the latent channel variance.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of corrupted copies.
    #[arg(long)]
    k: Option<usize>,
    /// Corruption seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Foreground threshold on the clean decode (default: the model's hint, else 0).
    #[arg(long)]
    threshold: Option<f64>,
    /// `indicator` or `value_scaled`.
    #[arg(long)]
    mask_mode: Option<String>,
}

#[derive(Args)]
pub struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct InitModelArgs {
    #[command(flatten)]
    common: Common,
    /// Built-in codec to write (`toy-conv`).
    #[arg(long)]
    kind: Option<String>,
    /// Initializer seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Input image (`.npy`, 2-D float32 or uint8).
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Patch side in pixels (default: 50/256 of the image side).
    #[arg(long)]
    patch: Option<usize>,
    /// Patch placement seed.
    #[arg(long)]
    patch_seed: Option<u64>,
    /// Bins of the pooled delta histogram.
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args)]
pub struct CorrelateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    scoring: ScoringArgs,
    /// Dataset directory with reference masks.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `default` (threshold + largest component) or `oracle`.
    #[arg(long)]
    segmenter: Option<String>,
    /// Intensity threshold of the default segmenter.
    #[arg(long)]
    segment_threshold: Option<f64>,
    /// Comma-separated latent damage levels (multiples of the channel std).
    #[arg(long)]
    damage_levels: Option<FloatList>,
    /// Damage seed.
    #[arg(long)]
    damage_seed: Option<u64>,
}

#[derive(Args)]
pub struct FilterArgs {
    #[command(flatten)]
    common: Common,
    /// Report CSV with an `id` column.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Confidence column (default: `delta`, else `delta_orig`).
    #[arg(long)]
    column: Option<String>,
    /// Rows with confidence >= cutoff are kept.
    #[arg(long)]
    cutoff: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
