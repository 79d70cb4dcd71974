// SPDX-License-Identifier: Apache-2.0

//! `dpred`: precision profiling, container encoding and accelerator models
//! from the command line.
//!
//! Exit status: 0 on success, 2 for usage errors, 3 for I/O errors, 4 for
//! invalid input or configuration, 5 for model errors (geometry, unsupported
//! design combinations, unknown fixtures).

mod output;
mod profile;
mod report;
mod simulate;
mod stream;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpred::tensors::BitWidth;
use dpred::ErrorKind;
use serde::Serialize;

pub const EXIT_IO: u8 = 3;
pub const EXIT_VALIDATION: u8 = 4;
pub const EXIT_MODEL: u8 = 5;

#[derive(Parser)]
#[command(name = "dpred", version, about = "Per-group precision profiling, DPRed containers and bit-serial accelerator models")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Global {
    /// Data width in bits, 8 or 16 [default: 16, or the tensor's own width]
    #[arg(long, global = true, value_parser = parse_width)]
    pub width: Option<u32>,
    /// Group size(s) for precision detection, comma separated.
    #[arg(long, global = true, value_delimiter = ',', default_value = "16")]
    pub group_size: Vec<usize>,
    /// Seed for synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (profile, simulate, sweep, report) or file (encode, decode).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Global {
    pub fn bit_width(&self) -> BitWidth {
        match self.width {
            Some(8) => BitWidth::W8,
            _ => BitWidth::W16,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("dpred-out"))
    }
}

fn parse_width(s: &str) -> Result<u32, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err(format!("width must be 8 or 16, got `{s}`")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-group precision histograms and effective precisions of tensors.
    Profile(profile::ProfileArgs),
    /// Encodes a tensor manifest into an NP, SP or DP stream file.
    Encode(stream::EncodeArgs),
    /// Decodes a stream file back into a tensor manifest.
    Decode(stream::DecodeArgs),
    /// Runs accelerator designs over a network fixture.
    Simulate(simulate::SimulateArgs),
    /// Normalized performance over a grid of memories and AM sizes.
    Sweep(simulate::SweepArgs),
    /// Ideal speedups and fill overheads for the published precision profiles.
    Report(report::ReportArgs),
}

/// Bad user input detected by the front end itself.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dpred::Error>() {
            return match e.kind() {
                ErrorKind::Io => EXIT_IO,
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::Model => EXIT_MODEL,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            return if e.is_io_error() { EXIT_IO } else { EXIT_VALIDATION };
        }
        if cause.is::<Invalid>() || cause.is::<serde_json::Error>() {
            return EXIT_VALIDATION;
        }
    }
    1
}

/// The cause chain joined with `: `, skipping causes already spelled out by
/// the message before them.
fn message(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if msg.is_empty() {
            msg = text;
        } else if !msg.ends_with(&text) {
            msg = format!("{msg}: {text}");
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Profile(a) => profile::run(g, a),
        Command::Encode(a) => stream::encode(g, a),
        Command::Decode(a) => stream::decode(g, a),
        Command::Simulate(a) => simulate::run(g, a),
        Command::Sweep(a) => simulate::sweep(g, a),
        Command::Report(a) => report::run(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
