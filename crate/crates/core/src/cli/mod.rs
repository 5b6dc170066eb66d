//! Command-line surface: config-driven runs that leave every artifact, the
//! resolved config and a provenance stamp in one output directory.

mod config;
mod run;

use std::ffi::OsString;
use std::io::ErrorKind;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_grid, EvalOptions, Inputs, RunConfig};
pub use run::{execute, sha256_hex, Command, RunSummary, CHECKPOINT_FILE, RESOLVED_CONFIG_FILE, STAMP_FILE};

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "lantern", version, about = "Survey/context fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand, Debug)]
enum CliCommand {
    /// Generate a synthetic survey population (manifest.json, records.jsonl).
    Generate(RunArgs),
    /// Train one variant and save a checkpoint and training log.
    Train(RunArgs),
    /// Score a model on held-out users at one threshold, overall and per frequency bucket.
    Evaluate(RunArgs),
    /// Train all three variants on one split and compare them (ablation.csv).
    Ablate(RunArgs),
    /// Score a model across a threshold grid (sweep.csv).
    Sweep(RunArgs),
    /// Histogram the fusion gate of a fused model (gates.csv).
    GateReport(RunArgs),
    /// Compare the key spaces of two survey cycles.
    LabelDiff(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long)]
    out: PathBuf,
    /// Run seed (training, and generation unless `generator_seed` is set).
    #[arg(long)]
    seed: Option<u64>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Decision threshold for `evaluate`.
    #[arg(long)]
    threshold: Option<f64>,
    /// Comma-separated thresholds for `sweep`.
    #[arg(long, value_name = "A,B,C")]
    grid: Option<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for pair in &self.overrides {
            cfg.set_override(pair)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(t) = self.threshold {
            cfg.set("threshold", &t.to_string())?;
        }
        if let Some(grid) = &self.grid {
            cfg.set("grid", grid)?;
        }
        Ok(cfg)
    }
}

/// Exit status for a failed run: 2 for bad input data or configuration,
/// 3 for failures while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { source, .. } if source.kind() == ErrorKind::NotFound => EXIT_DATA,
        Error::Io { .. } | Error::Invariant { .. } => EXIT_RUNTIME,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Results go to stdout, diagnostics to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (command, args) = match cli.command {
        CliCommand::Generate(a) => (Command::Generate, a),
        CliCommand::Train(a) => (Command::Train, a),
        CliCommand::Evaluate(a) => (Command::Evaluate, a),
        CliCommand::Ablate(a) => (Command::Ablate, a),
        CliCommand::Sweep(a) => (Command::Sweep, a),
        CliCommand::GateReport(a) => (Command::GateReport, a),
        CliCommand::LabelDiff(a) => (Command::LabelDiff, a),
    };
    match args.resolve().and_then(|cfg| execute(command, &cfg, &args.out)) {
        Ok(summary) => {
            for line in &summary.messages {
                println!("{line}");
            }
            println!("wrote {} artifacts to {}", summary.artifacts.len(), summary.out_dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
