//! `gfd`: train, evaluate and inspect fingerprint-disentangling models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gfd_core::GfdError;

#[derive(Parser, Debug)]
#[command(
    name = "gfd",
    version,
    about = "Disentangle, attribute and analyze generator fingerprints"
)]
pub struct Cli {
    /// Seed for every random source (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Compute device; only `cpu` is available in this build.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Pretrain C, then run the alternating G/H and D/C updates.
    Train(TrainArgs),
    /// Closed- or open-world evaluation on a manifest's test split.
    Eval(EvalArgs),
    /// Predict the source of images.
    Attribute(ImageArgs),
    /// Real/fake decision with a fake-probability score.
    Detect(ImageArgs),
    /// Write an image's fingerprint as .npy plus a .png visualization.
    ExtractFp(ExtractArgs),
    /// Plant a fingerprint on a carrier image.
    Composite(CompositeArgs),
    /// GLCM correlation vectors and per-source statistics of fingerprints.
    AnalyzeGlcm(GlcmArgs),
    /// Write the synthetic planted-pattern dataset.
    ToyData(ToyArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// attribution or detection.
    #[arg(long)]
    pub task: Option<String>,
    /// G, G+D, G+C, G+D+C or G+D+C+percept.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub pretrain_c_iters: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub resize_to: Option<usize>,
    /// Any config field as `dotted.key=value` (JSON value), repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "closed")]
    pub mode: String,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ImageArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output path; `.npy` and `.png` are written next to each other.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompositeArgs {
    /// Fingerprint `.npy` of shape [3, H, W].
    #[arg(long)]
    pub fp: PathBuf,
    #[arg(long)]
    pub carrier: PathBuf,
    /// Center-crop the carrier to the fingerprint size first.
    #[arg(long)]
    pub center_crop: bool,
    /// Output `.png`; a float `.npy` is written alongside.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GlcmArgs {
    /// Directory of fingerprint `.npy` files; subdirectories name the source.
    #[arg(long)]
    pub fp_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Run config whose `glcm` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub levels: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub pool_size: usize,
    #[arg(long, default_value_t = 2)]
    pub generators: usize,
}

fn error_line(e: &anyhow::Error) -> String {
    let kind = e.downcast_ref::<GfdError>().map_or("error", GfdError::kind);
    serde_json::json!({ "error": { "kind": kind, "message": format!("{e:#}") } }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp_secs()
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
