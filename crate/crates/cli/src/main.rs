mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::UsageError;

#[derive(Debug, Parser)]
#[command(name = "stxpn", version, about = "Instance segmentation on Stixels")]
struct Cli {
    /// Experiment configuration file (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-frame work.
    #[arg(long, global = true, env = "STXPN_THREADS")]
    threads: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with instance masks.
    Synth(SynthArgs),
    /// Derive Stixel ground truth from instance masks, or sweep t_ov.
    MakeGt(MakeGtArgs),
    /// Train the point network.
    Train(TrainArgs),
    /// Predict instance labelings.
    Infer(InferArgs),
    /// Score predictions against the dataset ground truth.
    Eval(EvalArgs),
    /// Time filtering, model and selection on synthetic workloads.
    Bench(BenchArgs),
    /// Write one SVG per frame.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Exact,
    Noisy,
    Empty,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    split: String,
    /// Scene preset replacing the configured scene.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Mask encoding: png16, pgm or txt.
    #[arg(long, default_value = "png16")]
    mask_encoding: String,
    #[arg(long)]
    no_masks: bool,
}

#[derive(Debug, Args)]
struct MakeGtArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overlap threshold; writes a dataset whose ground truth is generated.
    #[arg(long, conflicts_with = "sweep")]
    tov: Option<f64>,
    /// Thresholds `a:b:step` or `a,b,c`; writes the threshold/AP table.
    #[arg(long)]
    sweep: Option<String>,
    /// Sweep selection criterion: ap or ap50.
    #[arg(long, default_value = "ap")]
    criterion: String,
    /// Output dataset directory (`--tov`) or CSV file (`--sweep`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Continue from a checkpoint up to the configured epoch count.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Per-epoch loss CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// stxpn, statistical, hac-roi, hac-img or oracle.
    #[arg(long)]
    method: String,
    /// Network checkpoint (stxpn).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset for estimating class percentages (statistical).
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Class percentage CSV (statistical), instead of `--train-data`.
    #[arg(long)]
    percentages: Option<PathBuf>,
    /// Distance used by the statistical baseline: l1 or l2.
    #[arg(long, default_value = "l2")]
    metric: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output labels file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Predicted labels file.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-class AP CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Match counts per IoU threshold CSV.
    #[arg(long)]
    counts: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 753)]
    stixels: usize,
    #[arg(long, default_value_t = 50)]
    boxes: usize,
    #[arg(long, default_value_t = 10)]
    features: usize,
    /// Run the standard scaling workloads instead of a single one.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Labels file to draw; defaults to the dataset ground truth.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to these frame ids.
    #[arg(long = "frame")]
    frames: Vec<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<stxpn::Error>(), Some(stxpn::Error::Parameter(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
