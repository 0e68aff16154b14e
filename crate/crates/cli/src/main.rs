//! Single binary exposing the pipeline as subcommands.
//!
//! Every capability is reachable non-interactively for batch use and
//! CI: dataset validation, difficulty scoring, adaptive threshold
//! computation and filtering, crop-library inspection, augmentation,
//! evaluation, synthetic fixture generation, the stub detector, and
//! the full staged run. `--json` switches any subcommand to a single
//! machine-readable document on stdout. Exit codes: 0 success, 1
//! domain error, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use nsn_pipeline::stage::StageId;

mod commands;

use commands::{run_command, Globals};

#[derive(Parser)]
#[command(
    name = "nsn",
    version,
    about = "Adapts small-object detectors to unlabeled domains: \
             difficulty-aware pseudo-label correction, masked copy-paste \
             augmentation, staged large-to-small self-training, and \
             detection evaluation"
)]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON file with default settings (seed, jobs, workdir)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random stream (flag > config file > NSN_SEED > 0)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (flag > config file > NSN_JOBS)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Working directory for pipeline runs (flag > config file > NSN_WORKDIR > .)
    #[arg(long, global = true, value_name = "DIR")]
    workdir: Option<PathBuf>,
    /// Emit a single JSON document on stdout instead of text
    #[arg(long, global = true)]
    json: bool,
    /// Increase log detail on stderr (repeatable)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset manifest and every file it references
    Validate(ValidateArgs),
    /// Score labeled boxes and split them into difficulty categories
    Difficulty(DifficultyArgs),
    /// Compute per-category adaptive acceptance thresholds for a
    /// prediction snapshot
    Thresholds(SnapshotArgs),
    /// Apply adaptive thresholds to a prediction snapshot and write
    /// the accepted labels as a self-contained dataset
    Filter(FilterArgs),
    /// Build the object crop library from a labeled source dataset
    Crops(CropsArgs),
    /// Paste source object crops into the images of an accepted
    /// target dataset
    Augment(AugmentArgs),
    /// Score prediction files against ground truth at IoU 0.5
    Eval(EvalArgs),
    /// Normalized adaptation gain from adapted, source-only, and
    /// oracle scores
    Gain(GainArgs),
    /// Render a synthetic detection dataset from a scene spec file
    Synth(SynthArgs),
    /// Corrupt manifest ground truth into detector-style prediction
    /// files; defaults reproduce the labels exactly at confidence 1.0
    StubDetect(StubDetectArgs),
    /// Run or resume the staged self-training schedule in the workdir
    Run(RunArgs),
    /// Serve the detector and trainer file protocol with the built-in
    /// stub model
    StubAdapter(StubAdapterArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Dataset manifest to check
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
}

/// Difficulty cascade settings shared by the scoring subcommands.
#[derive(Args)]
struct ThresholdFlags {
    /// Pixel-area bound for the small-target branch
    #[arg(long, value_name = "AREA")]
    target_size: Option<f64>,
    /// Contrast bound for the low-contrast branch
    #[arg(long, value_name = "RMS")]
    local_contrast: Option<f64>,
    /// Variability bound for the simple-example branch
    #[arg(long, value_name = "RMS")]
    background_complexity: Option<f64>,
    /// Background rectangle scale relative to the target box
    #[arg(long, value_name = "FACTOR")]
    expansion_factor: Option<f64>,
}

#[derive(Args)]
struct DifficultyArgs {
    /// Labeled dataset manifest
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[command(flatten)]
    thresholds: ThresholdFlags,
}

#[derive(Args)]
struct SnapshotArgs {
    /// Target dataset manifest the predictions refer to
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory of per-image prediction files with confidences
    #[arg(long, value_name = "DIR")]
    predictions: PathBuf,
    /// Confidence floor below which predictions are discarded outright
    #[arg(long, value_name = "CONF")]
    tau_min: Option<f64>,
    /// Confidence ceiling no adaptive threshold exceeds
    #[arg(long, value_name = "CONF")]
    tau_max: Option<f64>,
    #[command(flatten)]
    thresholds: ThresholdFlags,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    snapshot: SnapshotArgs,
    /// Output directory for the accepted dataset
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct CropsArgs {
    /// Labeled source dataset manifest
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory of `<stem>.mask.png` object masks overriding saliency
    #[arg(long, value_name = "DIR")]
    masks: Option<PathBuf>,
    /// Keep crops whose mask had to fall back to the full box
    #[arg(long)]
    allow_degraded: bool,
}

#[derive(Args)]
struct AugmentArgs {
    /// Accepted target dataset manifest to augment
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Labeled source dataset manifest supplying object crops
    #[arg(long, value_name = "FILE")]
    crops: PathBuf,
    /// Directory of `<stem>.mask.png` object masks overriding saliency
    #[arg(long, value_name = "DIR")]
    masks: Option<PathBuf>,
    /// Output directory for the augmented dataset
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Pastes attempted per image
    #[arg(long, value_name = "N")]
    pastes: Option<usize>,
    /// Placement attempts per paste before giving up
    #[arg(long, value_name = "N")]
    max_retries: Option<u32>,
    /// Largest allowed pairwise overlap between placed boxes
    #[arg(long, value_name = "IOU")]
    overlap_limit: Option<f64>,
    /// Place pastes without checking overlap
    #[arg(long)]
    allow_overlap: bool,
    /// Keep crops whose mask had to fall back to the full box
    #[arg(long)]
    allow_degraded: bool,
    /// Fail instead of relaxing size matching when no crop fits
    #[arg(long)]
    no_size_fallback: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Exact area under the precision-recall curve
    AllPoint,
    /// Mean precision at the eleven evenly spaced recall points
    ElevenPoint,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth dataset manifest
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Directory of per-image prediction files with confidences
    #[arg(long, value_name = "DIR")]
    predictions: PathBuf,
    /// Precision-recall integration rule
    #[arg(long, value_enum, default_value = "all-point")]
    mode: ModeArg,
}

#[derive(Args)]
struct GainArgs {
    /// Score after adaptation
    #[arg(long, value_name = "MAP")]
    adapted: f64,
    /// Score of the source-only baseline
    #[arg(long, value_name = "MAP")]
    source: f64,
    /// Score of the model trained on labeled target data
    #[arg(long, value_name = "MAP")]
    oracle: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
    TargetAugmented,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec JSON file
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Number of images to render
    #[arg(long, value_name = "N")]
    count: u32,
    /// Output dataset directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Split recorded in the manifest
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Domain recorded in the manifest
    #[arg(long, value_enum, default_value = "source")]
    domain: DomainArg,
}

#[derive(Args)]
struct StubDetectArgs {
    /// Ground-truth dataset manifest
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Output directory for prediction files
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Probability of dropping each true box
    #[arg(long, value_name = "P", default_value_t = 0.0)]
    drop_rate: f64,
    /// Largest center displacement in pixels
    #[arg(long, value_name = "PX", default_value_t = 0.0)]
    jitter_px: f64,
    /// Expected false positives per image
    #[arg(long, value_name = "RATE", default_value_t = 0.0)]
    fp_rate: f64,
    /// Lower bound of emitted confidences
    #[arg(long, value_name = "CONF", default_value_t = 1.0)]
    conf_floor: f64,
    /// Upper bound of emitted confidences
    #[arg(long, value_name = "CONF", default_value_t = 1.0)]
    conf_ceil: f64,
}

fn parse_stage(s: &str) -> Result<StageId, String> {
    s.parse().map_err(|e| format!("{e}"))
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline definition file; its relative paths resolve against
    /// the workdir and its own seed drives the run
    #[arg(value_name = "PIPELINE")]
    pipeline: PathBuf,
    /// Stop once this period completes; rerun to resume after it
    #[arg(long, value_name = "STAGE", value_parser = parse_stage)]
    stop_after: Option<StageId>,
}

#[derive(Args)]
struct StubAdapterArgs {
    #[command(subcommand)]
    action: StubAction,
}

#[derive(Subcommand)]
enum StubAction {
    /// Answer a detector inference request file
    Infer {
        /// Request file written by the orchestrator
        #[arg(long, value_name = "FILE")]
        request: PathBuf,
    },
    /// Answer a trainer request file
    Train {
        /// Request file written by the orchestrator
        #[arg(long, value_name = "FILE")]
        request: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };

    let level = match cli.globals.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let globals = match Globals::resolve(&cli.globals) {
        Ok(g) => g,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(1);
        }
    };
    if let Some(jobs) = globals.jobs {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
        if let Err(e) = pool {
            log::warn!("worker pool already configured: {e}");
        }
    }

    match run_command(&cli.command, &globals) {
        Ok(outcome) => {
            if globals.json {
                match serde_json::to_string_pretty(&outcome.doc) {
                    Ok(text) => println!("{text}"),
                    Err(e) => {
                        eprintln!("error: cannot serialize output: {e}");
                        return ExitCode::from(1);
                    }
                }
            } else {
                print!("{}", outcome.human);
            }
            match outcome.problem {
                Some(problem) => {
                    eprintln!("error: {problem}");
                    ExitCode::from(1)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
