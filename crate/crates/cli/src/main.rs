//! `coffee` command-line tool.

use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod manifest;

use args::{Cli, Command};
use commands::Outcome;

/// Bad flag values or combinations clap cannot catch on its own.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

const EXIT_INVALID: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // --help and --version land here too, with exit code 0
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Invalid) => ExitCode::from(EXIT_INVALID),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<Usage>().is_some()
                || matches!(e.downcast_ref::<coffee_core::Error>(), Some(coffee_core::Error::Config(_)));
            ExitCode::from(if usage { EXIT_USAGE } else { EXIT_INVALID })
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Usage("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let dir = manifest::run_dir(&cli.out, cli.command.name(), cli.tag.as_deref())?;
    log::info!("writing to {}", dir.display());
    match &cli.command {
        Command::Validate(a) => commands::validate(a, &dir),
        Command::Preprocess(a) => commands::preprocess(a, &dir),
        Command::Quality(a) => commands::quality(a, &dir),
        Command::Align(a) => commands::align(a, &dir),
        Command::Effects(a) => commands::effects(a, &dir),
        Command::Synth(a) => commands::synth(a, &dir),
    }
}
