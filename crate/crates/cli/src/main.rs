//! `quasipair` command-line front end.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cmd::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "quasipair",
    version,
    about = "Similarity-matched LR/HR patch datasets"
)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for matching and rendering (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic LR/HR dataset pair.
    Demo(DemoArgs),
    /// Resize, rotation-correct, recenter and normalize every volume.
    Preprocess(PreprocessArgs),
    /// Blur, downsample and upsample every volume.
    Degrade(DegradeArgs),
    /// Match LR patches to HR patches and write a manifest.
    Match(MatchArgs),
    /// Histogram of manifest weights.
    Stats(StatsArgs),
    /// PSNR, SSIM and RMSE between two volume directories.
    Metrics(MetricsArgs),
    /// Evaluate the training objective on a batch of network outputs.
    LossEval(LossEvalArgs),
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    /// Output directory; `lr/` and `hr/` are created inside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Patients per group.
    #[arg(long, default_value_t = 4)]
    pub patients: usize,
    #[arg(long, default_value_t = 8)]
    pub slices: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Relative jitter of the HR phantoms against the LR ones, in [0, 1].
    #[arg(long, default_value_t = 0.25)]
    pub perturbation: f64,
    #[arg(long, default_value_t = 3.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Output slice side length.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Nmi,
    Pcc,
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Levels {
    Hierarchical,
    SliceAndPatch,
    #[value(alias = "patch-only")]
    Exhaustive,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[arg(long)]
    pub lr: PathBuf,
    #[arg(long)]
    pub hr: PathBuf,
    /// Manifest path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 64)]
    pub stride: usize,
    #[arg(long, value_enum, default_value_t = Metric::Nmi)]
    pub metric: Metric,
    /// Histogram bins for NMI.
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
    /// RBF bandwidth (default: sqrt(pixels) / 2).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.4)]
    pub threshold: f64,
    /// Keep only records with weight strictly above the threshold.
    #[arg(long)]
    pub filter: bool,
    #[arg(long, value_enum, default_value_t = Levels::Hierarchical)]
    pub levels: Levels,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Histogram CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SsimModeArg {
    Global,
    Windowed,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long, value_enum, default_value_t = SsimModeArg::Global)]
    pub ssim_mode: SsimModeArg,
    #[arg(long, default_value_t = 8)]
    pub window: usize,
    #[arg(long, default_value_t = 0.01)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.03)]
    pub k2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dynamic_range: f64,
    /// PSNR peak (default: maximum of each reference slice).
    #[arg(long)]
    pub peak: Option<f64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AdvArg {
    Log,
    Lsq,
}

#[derive(Args, Debug)]
pub struct LossEvalArgs {
    /// Directory holding x, y, gx, fy, fgx, gfy, fx, gy volumes and values.csv.
    #[arg(long)]
    pub batch: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 256.0)]
    pub lambda3: f64,
    #[arg(long, value_enum, default_value_t = AdvArg::Lsq)]
    pub adv: AdvArg,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let seed = cli.seed;
    let work = move || match cli.command {
        Command::Demo(a) => cmd::demo(&a, seed),
        Command::Preprocess(a) => cmd::preprocess(&a),
        Command::Degrade(a) => cmd::degrade(&a),
        Command::Match(a) => cmd::run_match(&a),
        Command::Stats(a) => cmd::stats(&a),
        Command::Metrics(a) => cmd::metrics(&a),
        Command::LossEval(a) => cmd::loss_eval(&a),
    };
    match cli.threads {
        Some(0) => Err(Failure::usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Data(e.into()))?
            .install(work),
        None => work(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
