use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Chart generation from audio, tempo and difficulty.
#[derive(Debug, Parser)]
#[command(name = "goct", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Osu,
    Sm,
    Cchart,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert an .osu, .sm or .cchart file into canonical .cchart files.
    Import {
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check charts against the dataset filters; exits 1 if any fails.
    Validate {
        #[arg(long = "chart", required = true)]
        charts: Vec<PathBuf>,
    },
    /// Extract beat-aligned log-Mel features.
    Features {
        #[arg(long)]
        audio: PathBuf,
        /// Chart whose tempo map places the frames.
        #[arg(long)]
        tempo: PathBuf,
        /// Defaults to the chart's beat count.
        #[arg(long)]
        beats: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build per-split shards and feature files from a manifest.
    DatasetBuild {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Time tokens only, no action tokens.
        #[arg(long)]
        time_only: bool,
        /// Shift every window by a random fraction of a beat.
        #[arg(long)]
        unaligned: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Assign songs to train/valid/test and write a new manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// train,valid,test
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Corpus statistics for a manifest, optionally with built shards.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a model from scratch.
    Train {
        /// `key=value` config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Continue training a model, by default at lr 2e-5 for 4 epochs.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Generate a chart for an audio file.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        tempo: PathBuf,
        #[arg(long)]
        difficulty: f64,
        /// Defaults to the tempo chart's beat count.
        #[arg(long)]
        beats: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted charts against references.
    Eval {
        /// Repeat together with --ref to pool several pairs.
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        #[arg(long = "ref", required = true)]
        refs: Vec<PathBuf>,
        /// Match within a time window instead of on exact ticks.
        #[arg(long, num_args = 0..=1, default_missing_value = "30")]
        tolerance_ms: Option<f64>,
        #[arg(long)]
        per_group: bool,
        /// Exact mode: a tick only matches if its action matches too.
        #[arg(long, conflicts_with = "tolerance_ms")]
        strict_actions: bool,
    },
    /// Dump a chart as window tokens.
    Tokenize {
        #[arg(long)]
        chart: PathBuf,
        #[arg(long)]
        time_only: bool,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild a chart from a token dump.
    Detokenize {
        /// Defaults to stdin.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Any config key, e.g. `--set d_model=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn run(cli: Cli) -> anyhow::Result<commands::Status> {
    use commands::*;
    match cli.command {
        Command::Import { format, input, out } => import(format, &input, &out),
        Command::Validate { charts } => validate(&charts),
        Command::Features { audio, tempo, beats, out } => features(&audio, &tempo, beats, &out),
        Command::DatasetBuild { manifest, out, time_only, unaligned, seed, jobs } => {
            dataset_build(&manifest, &out, time_only, unaligned, seed, jobs)
        }
        Command::Split { manifest, out, ratios, seed } => split(&manifest, &out, &ratios, seed),
        Command::Stats { manifest, data } => stats(&manifest, data.as_deref()),
        Command::Train { config, data, out, overrides } => train(config.as_deref(), &data, &out, &overrides),
        Command::Finetune { model, data, out, config, overrides } => {
            finetune(&model, &data, &out, config.as_deref(), &overrides)
        }
        Command::Generate { model, audio, tempo, difficulty, beats, out } => {
            generate(&model, &audio, &tempo, difficulty, beats, &out)
        }
        Command::Eval { preds, refs, tolerance_ms, per_group, strict_actions } => {
            eval(&preds, &refs, tolerance_ms, per_group, strict_actions)
        }
        Command::Tokenize { chart, time_only, out } => tokenize(&chart, time_only, out.as_deref()),
        Command::Detokenize { input, out } => detokenize(input.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too, with exit code 0
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
