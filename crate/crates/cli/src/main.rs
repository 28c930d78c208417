//! `nwcodec`: train, encode, decode, evaluate, and benchmark the codec.
//!
//! All output is line-delimited `key=value` records. Exit codes: 0 success,
//! 1 input/IO error, 2 configuration error, 3 runtime (numerical/bitstream)
//! error.

mod commands;
mod config;
mod session;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::TrainOptions;
use session::DEFAULT_SEED;

#[derive(Parser)]
#[command(name = "nwcodec", version, about = "Scalable neural waveform speech codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a cascade on a corpus of 16 kHz mono WAV files.
    Train {
        /// Corpus file or directory of .wav files.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Operating point: low (~12 kbps), mid (~19.2 kbps), high (~32 kbps).
        #[arg(long, default_value = "mid")]
        mode: String,
        /// Output checkpoint path.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Phase-I epoch cap per module.
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        /// Plain-text key/value config file; overrides flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Encode a WAV file into a .nwc container.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Decode a .nwc container back to WAV.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Report SNR, mel distortion, and bitrate for a decoded file.
    Eval {
        /// Reference WAV.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Decoded/degraded WAV, same length.
        #[arg(long = "deg")]
        degraded: PathBuf,
        /// Optional container to report bitrate from.
        #[arg(long)]
        bitstream: Option<PathBuf>,
    },
    /// Measure the encode+decode real-time factor (5 runs, median).
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Test WAV file or directory.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

fn run(cli: Cli) -> nwcodec_core::Result<()> {
    match cli.command {
        Command::Train { corpus, mode, checkpoint, seed, epochs, config, threads } => {
            commands::cmd_train(&TrainOptions { corpus, mode, checkpoint, seed, epochs, config, threads })
        }
        Command::Encode { checkpoint, input, output } => {
            commands::cmd_encode(&checkpoint, &input, &output)
        }
        Command::Decode { checkpoint, input, output } => {
            commands::cmd_decode(&checkpoint, &input, &output)
        }
        Command::Eval { reference, degraded, bitstream } => {
            commands::cmd_eval(&reference, &degraded, bitstream.as_deref())
        }
        Command::Bench { checkpoint, input, threads } => {
            commands::cmd_bench(&checkpoint, &input, threads)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_category());
    }
}
