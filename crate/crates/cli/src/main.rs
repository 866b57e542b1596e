//! `voxscreen`: feature extraction, splitting, training and evaluation from
//! the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use voxscreen::models::{ModelError, ModelKind};
use voxscreen::FeatureKind;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "voxscreen", version, about = "Respiratory voice screening pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a labelled synthetic tone corpus (audio/*.wav + manifest.csv).
    Synth(SynthArgs),
    /// Decode every manifest row and write MFCC / log-Mel feature files.
    Extract(ExtractArgs),
    /// Assign samples to train/val/test, keeping participants together.
    Split(SplitArgs),
    /// Fit the metadata encoding on the training split and encode all rows.
    Encode(EncodeArgs),
    /// Train one model and write a run directory.
    Train(TrainArgs),
    /// Score a held-out split of a run, or a predictions CSV.
    Evaluate(EvaluateArgs),
    /// Probability for a single recording or metadata row.
    Predict(PredictArgs),
    /// Comparison table and ROC plot over several evaluation reports.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
}

#[derive(Args, Debug, Clone)]
struct DspArgs {
    #[arg(long)]
    frame_len: Option<usize>,
    #[arg(long)]
    hop_len: Option<usize>,
    #[arg(long)]
    fft_size: Option<usize>,
    /// Mel bands for MFCCs (log-Mel patches always use 64).
    #[arg(long)]
    n_mels: Option<usize>,
    #[arg(long)]
    n_mfcc: Option<usize>,
    #[arg(long)]
    preemphasis: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Mfcc,
    #[value(name = "log_mel", alias = "logmel")]
    LogMel,
}

impl From<KindArg> for FeatureKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Mfcc => FeatureKind::Mfcc,
            KindArg::LogMel => FeatureKind::LogMel,
        }
    }
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Feature root; files land in `<out>/<kind>/<sample_id>.vxf`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "mfcc,log_mel")]
    kinds: Vec<KindArg>,
    #[command(flatten)]
    dsp: DspArgs,
}

#[derive(Args, Debug, Clone)]
struct SplitFlags {
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    val_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    test_frac: f64,
    /// Split without preserving the class ratio.
    #[arg(long)]
    no_stratify: bool,
    /// Move positives from val into train until train holds this many.
    #[arg(long)]
    rebalance_target: Option<usize>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output CSV with `sample_id,split` rows.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    split: SplitFlags,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    splits: PathBuf,
    /// Directory for schema.json and encoded.csv.
    #[arg(long)]
    out: PathBuf,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: ModelError| e.to_string())
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_model, required_unless_present = "config")]
    model: Option<ModelKind>,
    #[arg(long, required_unless_present = "config")]
    manifest: Option<PathBuf>,
    /// Feature root written by `extract` (audio models only).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Existing split assignment; otherwise one is drawn from the seed.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    /// Repeat a previous run from its run_config.json; other flags are ignored.
    #[arg(long, conflicts_with_all = ["model", "manifest", "seed"])]
    config: Option<PathBuf>,
    #[command(flatten)]
    split: SplitFlags,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug, Clone)]
struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    patch_height: Option<usize>,
    #[arg(long)]
    patch_width: Option<usize>,
    #[arg(long)]
    conv1_filters: Option<usize>,
    #[arg(long)]
    conv2_filters: Option<usize>,
    #[arg(long)]
    svm_c: Option<f64>,
    #[arg(long)]
    svm_gamma: Option<f64>,
    #[arg(long)]
    svm_tol: Option<f64>,
    #[arg(long)]
    logreg_epochs: Option<usize>,
    #[arg(long)]
    logreg_lr: Option<f64>,
    #[arg(long)]
    logreg_l2: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    run: Option<PathBuf>,
    /// CSV with `sample_id,label,probability` instead of a run.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value = "model")]
    model_name: String,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Report path (JSON). Defaults to `<run>/eval_<split>.json` or stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Artifact file (model.vxm) or run directory.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    audio: Option<PathBuf>,
    #[arg(long, requires = "sample_id")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    sample_id: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Evaluation report JSON files.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Directory for table.txt and roc.svg.
    #[arg(long)]
    out: PathBuf,
}

/// Failure that should exit with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<voxscreen::Error>() {
            if e.is_numeric() {
                return 3;
            }
        }
        if let Some(ModelError::NanLoss { .. } | ModelError::NonFinite(_)) = cause.downcast_ref::<ModelError>() {
            return 3;
        }
    }
    2
}

/// The error chain joined with ": ", skipping causes the outer message
/// already spells out.
fn describe(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    for cause in err.chain().skip(1) {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            out.push_str(": ");
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Extract(a) => commands::extract(a),
        Command::Split(a) => commands::split(a),
        Command::Encode(a) => commands::encode(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
