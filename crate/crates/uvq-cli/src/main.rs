//! `uvq` — fixed-rate universal quantization with joint source
//! identification: sampling, coding, identification, and the experiment
//! suite, driven by plain-text configuration files.

mod commands;
mod config;
mod experiments;
mod plot;
mod records;
mod samples;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use commands::ExperimentId;

#[derive(Parser)]
#[command(
    name = "uvq",
    version,
    about = "Two-stage universal vector quantization with source identification",
    long_about = "Encode i.i.d. vector sources at a fixed rate while identifying their \
                  parameter, and run the accompanying identification, redundancy, and \
                  bounds-audit experiments.  `uvq schema` prints the configuration and \
                  file-format reference."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw i.i.d. sample blocks from the configured family.
    Sample {
        /// Experiment configuration file.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Source parameter, comma-separated (e.g. `0.3,0.7`).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "T1,T2,...")]
        theta: Vec<f64>,
        /// Number of blocks to draw.
        #[arg(long, value_name = "COUNT")]
        blocks: usize,
        /// Letters per block.
        #[arg(long = "block-len", value_name = "N")]
        block_len: usize,
        /// Output sample file (a `.dims` sidecar is written next to it).
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
    },
    /// Encode a raw sample file into a two-stage stream.
    Encode {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Input sample file with its `.dims` sidecar.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Output stream file.
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// Also write the encoder-side reproduction blocks.
        #[arg(long, value_name = "FILE")]
        reproduction: Option<PathBuf>,
        /// Also write the per-block identification trace (CSV).
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        /// Persist designed codebooks under this directory.
        #[arg(long = "codebook-cache", value_name = "DIR")]
        codebook_cache: Option<PathBuf>,
    },
    /// Decode a two-stage stream back into reproduction blocks.
    Decode {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Input stream file.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Output sample file for the reproductions.
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// Also write the per-block identification trace (CSV).
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        /// Persist rederived codebooks under this directory.
        #[arg(long = "codebook-cache", value_name = "DIR")]
        codebook_cache: Option<PathBuf>,
    },
    /// Identify the source parameter per block of a sample file.
    Identify {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Input sample file with its `.dims` sidecar.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Output CSV (stdout when omitted).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Run a configured experiment: records.csv, plots, and a manifest.
    Experiment {
        /// Which experiment to run.
        #[arg(value_enum, value_name = "ID")]
        id: ExperimentArg,
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
    },
    /// Re-render plots and slope fits from an existing records.csv.
    Report {
        /// Records file written by `uvq experiment`.
        #[arg(long, value_name = "FILE")]
        records: PathBuf,
        /// Directory the SVG plots are written into.
        #[arg(long, value_name = "DIR")]
        output: PathBuf,
    },
    /// Print the configuration and file-format reference.
    Schema,
}

#[derive(Copy, Clone, ValueEnum)]
enum ExperimentArg {
    Identification,
    Redundancy,
    BoundsAudit,
}

impl From<ExperimentArg> for ExperimentId {
    fn from(arg: ExperimentArg) -> Self {
        match arg {
            ExperimentArg::Identification => ExperimentId::Identification,
            ExperimentArg::Redundancy => ExperimentId::Redundancy,
            ExperimentArg::BoundsAudit => ExperimentId::BoundsAudit,
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Sample { config, theta, blocks, block_len, output } => {
            commands::cmd_sample(&config, &theta, blocks, block_len, &output)
        }
        Command::Encode { config, input, output, reproduction, trace, codebook_cache } => {
            commands::cmd_encode(
                &config,
                &input,
                &output,
                reproduction.as_deref(),
                trace.as_deref(),
                codebook_cache.as_deref(),
            )
        }
        Command::Decode { config, input, output, trace, codebook_cache } => {
            commands::cmd_decode(&config, &input, &output, trace.as_deref(), codebook_cache.as_deref())
        }
        Command::Identify { config, input, output } => {
            commands::cmd_identify(&config, &input, output.as_deref())
        }
        Command::Experiment { id, config } => commands::cmd_experiment(id.into(), &config),
        Command::Report { records, output } => commands::cmd_report(&records, &output),
        Command::Schema => {
            print!("{}", commands::SCHEMA_HELP);
            Ok(())
        }
    }
}

/// Exit 1 for validation and usage problems, 2 for runtime failures.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(lib) = cause.downcast_ref::<uvq::Error>() {
            return if lib.is_usage() { 1 } else { 2 };
        }
        if cause.downcast_ref::<config::ConfigError>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = classify(&err);
            eprintln!("error: {err:#}");
            if code == 1 {
                eprintln!();
                eprintln!("{}", commands::SCHEMA_HELP);
            }
            ExitCode::from(code)
        }
    }
}
