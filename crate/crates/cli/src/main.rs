mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::ConfigFile;

#[derive(Parser, Debug)]
#[command(name = "ctkd", version, about = "Cross-tokenizer knowledge-distillation toolkit")]
struct Cli {
    /// JSON settings file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for generated test data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the student -> teacher projection matrix.
    BuildW(commands::build_w::Args),
    /// Align tokenizations of a file of texts, one text per line.
    Align(commands::align::Args),
    /// Report common-set coverage per token category and pick a loss mode.
    Audit(commands::audit::Args),
    /// Evaluate the distillation step described by the config file.
    Loss(commands::loss::Args),
    /// Write a small self-contained example workspace.
    Fixture(commands::fixture::Args),
}

pub struct Globals {
    pub config: Option<ConfigFile>,
    pub seed: u64,
    pub format: Format,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let globals = Globals { config, seed: cli.seed, format: cli.format };
    match cli.command {
        Command::BuildW(args) => commands::build_w::run(args, &globals),
        Command::Align(args) => commands::align::run(args, &globals),
        Command::Audit(args) => commands::audit::run(args, &globals),
        Command::Loss(args) => commands::loss::run(args, &globals),
        Command::Fixture(args) => commands::fixture::run(args, &globals),
    }
}

/// 2 for filesystem failures anywhere in the chain, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<ctkd::Error>().is_some_and(ctkd::Error::is_io)
    });
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
