use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use derevrb::config::CONFIG_ENV;
use derevrb::io::SampleFormat;

#[derive(Debug, Parser)]
#[command(name = "derevrb", version, about = "Blind multichannel dereverberation with learned PSD priors")]
pub struct Cli {
    /// TOML experiment configuration; flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convolve clean speech with a scene and write a manifest.
    Simulate(SimulateArgs),
    /// Train an autoencoder on clean speech.
    TrainAe(TrainArgs),
    /// Suppress late reverberation in one recording or a whole manifest.
    Dereverb(DereverbArgs),
    /// Compute FwSNR, CD and LLR against early-reflection references.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene TOML (simulated room, identity or measured responses).
    #[arg(long)]
    pub scene: PathBuf,
    /// Directory of mono clean WAV files.
    #[arg(long, conflicts_with = "synthetic")]
    pub clean_dir: Option<PathBuf>,
    /// Generate this many synthetic speech-like utterances instead.
    #[arg(long, required_unless_present = "clean_dir")]
    pub synthetic: Option<usize>,
    /// Length of synthetic utterances in seconds.
    #[arg(long, default_value_t = 3.0)]
    pub duration: f64,
    /// Seed for synthetic utterances; defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Microphone whose early part becomes the reference.
    #[arg(long, default_value_t = 0)]
    pub reference_channel: usize,
    #[arg(long, default_value = "float32")]
    pub format: SampleFormat,
    /// Output directory; receives `manifest.txt`, `rir.wav` and one
    /// subdirectory per signal type.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of mono clean WAV files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// `fc` or `lstm`.
    #[arg(long, default_value = "fc")]
    pub kind: String,
    /// Comma-separated hidden widths, e.g. 512,48,512.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Replace the middle hidden width.
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub validation_split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history records; defaults to `<out>.history`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

/// Prediction order: a number or `auto` for the per-channel-count default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderArg {
    Auto,
    Fixed(usize),
}

impl FromStr for OrderArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(OrderArg::Auto);
        }
        s.parse()
            .map(OrderArg::Fixed)
            .map_err(|_| format!("expected a positive integer or `auto`, got `{s}`"))
    }
}

#[derive(Debug, Args)]
pub struct DereverbArgs {
    /// One multichannel WAV, or one mono WAV per microphone.
    #[arg(long, num_args = 1.., conflicts_with = "manifest")]
    pub input: Vec<PathBuf>,
    /// Process every utterance of a simulation manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output WAV for a single recording.
    #[arg(long, requires = "input")]
    pub output: Option<PathBuf>,
    /// Output directory for manifest mode.
    #[arg(long, requires = "manifest")]
    pub out_dir: Option<PathBuf>,
    /// `periodogram`, `ar`, `neural-fc` or `neural-lstm`.
    #[arg(long)]
    pub prior: Option<String>,
    /// Autoencoder model for the neural priors.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub ar_order: Option<usize>,
    /// Use the first N microphones.
    #[arg(long, conflicts_with = "mics")]
    pub channels: Option<usize>,
    /// Comma-separated microphone indices, e.g. 0,2,4,6.
    #[arg(long, value_delimiter = ',')]
    pub mics: Option<Vec<usize>>,
    /// Prediction order per channel, or `auto`.
    #[arg(long)]
    pub order: Option<OrderArg>,
    #[arg(long)]
    pub delay: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Reference microphone, as an index into the selected channels.
    #[arg(long)]
    pub reference: Option<usize>,
    /// Early-reflection reference; adds per-iteration FwSNR to diagnostics.
    #[arg(long, requires = "input")]
    pub early_reference: Option<PathBuf>,
    /// Per-iteration diagnostics records for a single recording.
    #[arg(long, requires = "input")]
    pub diagnostics: Option<PathBuf>,
    #[arg(long, default_value = "float32")]
    pub format: SampleFormat,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, requires = "processed", conflicts_with = "manifest")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub processed: Option<PathBuf>,
    /// Score every manifest utterance against its early reference.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory holding `<name>.wav` outputs of `dereverb --manifest`.
    #[arg(long)]
    pub processed_dir: Option<PathBuf>,
    /// Score the unprocessed reference microphone instead.
    #[arg(long, requires = "manifest", conflicts_with = "processed_dir")]
    pub unprocessed: bool,
    /// Diagnostics files whose per-iteration FwSNR is tabulated.
    #[arg(long, num_args = 1..)]
    pub diagnostics: Vec<PathBuf>,
    /// Records file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}
