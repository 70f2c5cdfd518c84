//! `visdep`: command-line pipeline over the visual-dependence toolkit.
//!
//! ```text
//! visdep synth --out-dir run
//! visdep train --out-dir run --loss wneg
//! visdep eval  --out-dir run
//! ```

mod args;
mod commands;
mod error;
mod svg;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use visdep_core::Execution;

use crate::args::{Cli, Command};
use crate::commands::{Ctx, RunRecord};
use crate::error::{CliError, Result};

const DEFAULT_OUT_DIR: &str = "visdep-out";

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Analyze(_) => "analyze",
        Command::Filter(_) => "filter",
        Command::Sweep(_) => "sweep",
        Command::Plot(_) => "plot",
        Command::Replay(_) => "replay",
    }
}

fn parse(argv: impl IntoIterator<Item = OsString>) -> Result<Cli> {
    Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            std::process::exit(0);
        }
        _ => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            CliError::Usage(first)
        }
    })
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    if let Command::Replay(r) = &cli.command {
        let record = RunRecord::read(&r.run_json)?;
        let mut full = vec![OsString::from("visdep")];
        full.extend(record.argv.iter().map(OsString::from));
        let mut replayed = parse(full)?;
        if matches!(replayed.command, Command::Replay(_)) {
            return Err(CliError::Usage("a replay record cannot itself be a replay".into()));
        }
        replayed.out_dir = Some(cli.out_dir.clone().unwrap_or(record.out_dir));
        return execute(replayed, record.argv);
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| {
        CliError::Core(visdep_core::Error::Io { path: out_dir.clone(), source: e })
    })?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let mut ctx = Ctx::new(cli.seed, out_dir.clone(), exec);
    let outcome = match &cli.command {
        Command::Synth(a) => commands::synth(&mut ctx, a)?,
        Command::Train(a) => commands::train(&mut ctx, a)?,
        Command::Eval(a) => commands::eval(&mut ctx, a)?,
        Command::Analyze(a) => commands::analyze(&mut ctx, a)?,
        Command::Filter(a) => commands::filter(&mut ctx, a)?,
        Command::Sweep(a) => commands::sweep(&mut ctx, a)?,
        Command::Plot(a) => commands::plot(&mut ctx, a)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    RunRecord {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command_name(&cli.command).to_string(),
        argv,
        seed: cli.seed,
        out_dir,
        sequential: cli.sequential,
        config: outcome.config,
        artifacts: outcome.artifacts,
    }
    .write(&ctx.out_dir)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let result = parse(std::env::args_os()).and_then(|cli| execute(cli, argv));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
