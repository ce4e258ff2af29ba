//! Batch experiment driver: preprocess recordings, generate synthetic
//! data, train, evaluate with leave-one-subject-out folds, sweep
//! connection types and stages, and export embeddings.
//!
//! Exit codes: 1 configuration error, 2 input format error, 3 signal
//! preprocessing error, 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attx_core::data::Coupling;
use attx_core::dsp::PreprocessParams;
use attx_core::Error;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "attx", version, about = "Multimodal time-series classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, resample, normalize, window, and label raw recordings into
    /// a segment archive.
    Preprocess {
        /// Recording files or directories of them (CSV or binary).
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Segment archive to write.
        #[arg(long)]
        output: PathBuf,
        /// Label scheme: wesad_binary, wesad_3class, swell_binary,
        /// case_arousal, or binary.
        #[arg(long)]
        scheme: String,
        #[arg(long, default_value_t = 256)]
        target_rate: u32,
        #[arg(long, default_value_t = 10.0)]
        window_s: f64,
        #[arg(long, default_value_t = 0.6)]
        overlap: f64,
        #[arg(long, default_value_t = 4)]
        filter_order: usize,
    },
    /// Generate a synthetic two-modality archive.
    Synth {
        /// independent | gated
        #[arg(long, value_parser = parse_coupling)]
        coupling: Coupling,
        #[arg(long, default_value_t = 6)]
        subjects: usize,
        #[arg(long, default_value_t = 100)]
        segments_per_subject: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one model on the whole dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Leave-one-subject-out evaluation.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate every (type, stage set, encoder) grid cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Skip cells already present in the sweep state file.
        #[arg(long)]
        resume: bool,
    },
    /// Write merged embeddings of a trained checkpoint to CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
}

fn parse_coupling(s: &str) -> Result<Coupling, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    output: Option<PathBuf>,
) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(output) = output {
        config.output_dir = output;
    }
    Ok(config)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Preprocess {
            input,
            output,
            scheme,
            target_rate,
            window_s,
            overlap,
            filter_order,
        } => commands::preprocess::run(&commands::preprocess::PreprocessArgs {
            inputs: input,
            output,
            scheme,
            params: PreprocessParams {
                filter_order,
                target_rate,
                window_s,
                overlap,
                ..PreprocessParams::default()
            },
        }),
        Command::Synth {
            coupling,
            subjects,
            segments_per_subject,
            seed,
            output,
        } => commands::synth::run(&commands::synth::SynthArgs {
            coupling,
            subjects,
            segments_per_subject,
            seed,
            output,
        }),
        Command::Train {
            config,
            seed,
            output,
        } => commands::train::run(&load_config(&config, seed, output)?),
        Command::Evaluate {
            config,
            seed,
            output,
            workers,
        } => commands::evaluate::run(&load_config(&config, seed, output)?, workers),
        Command::Sweep {
            config,
            seed,
            output,
            workers,
            resume,
        } => commands::sweep::run(&load_config(&config, seed, output)?, workers, resume),
        Command::ExportEmbeddings {
            checkpoint,
            data,
            output,
            batch_size,
        } => commands::embeddings::run(&commands::embeddings::EmbeddingsArgs {
            checkpoint,
            data,
            output,
            batch_size,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) => 1,
                Error::Format(_) | Error::Io(_) => 2,
                Error::Dsp(_) => 3,
                Error::Numeric(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}
