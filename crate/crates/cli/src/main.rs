mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::Beam;

#[derive(Parser)]
#[command(
    name = "rnnlm-rescore",
    version,
    about = "On-the-fly RNNLM lattice rescoring with indexed contexts and a rescoring cache"
)]
struct Cli {
    /// Flat `key = value` configuration file; relative paths inside it
    /// resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and train the RNNLM, logging per-epoch perplexity.
    TrainRnnlm,
    /// Train the rescoring n-gram and the lattice LM, written as ARPA files.
    TrainNgram,
    /// Generate one lattice per reference sentence.
    GenLattices,
    /// Rescore lattice files and print one best hypothesis per utterance.
    Decode {
        #[arg(long, value_enum, default_value_t = Mode::Onthefly)]
        mode: Mode,
        /// Tokens expanded per lattice node, or `all`.
        #[arg(long)]
        beam: Option<Beam>,
        /// Disable the rescoring cache.
        #[arg(long)]
        no_cache: bool,
        /// Lattice files; defaults to every `*.lat` under the configured
        /// lattice directory.
        lattices: Vec<PathBuf>,
    },
    /// Run the cache capacity sweep and system comparison, then write the
    /// raw ledgers and the tables derived from them.
    Bench {
        #[arg(long)]
        beam: Option<Beam>,
    },
    /// Re-derive the tables from ledgers already in the output directory.
    Report,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Onthefly,
    TwopassRnnlm,
    TwopassHybrid,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.config.as_deref(), cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
    }
}
