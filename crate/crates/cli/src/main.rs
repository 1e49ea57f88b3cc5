// SPDX-License-Identifier: Apache-2.0

//! `graphdiff`: exit status 0 on success, 1 for usage errors, 2 for bad
//! input data, 3 for numerical failures.

mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use graphdiff_core::{ErrorClass, Result};

use args::{with_config, Cli, Command};

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Gen(a) => commands::gen(&with_config(a, config)?),
        Command::Graph(a) => commands::graph(&with_config(a, config)?),
        Command::Diffuse(a) => commands::diffuse_cmd(&with_config(a, config)?),
        Command::Baseline(a) => commands::baseline(&with_config(a, config)?),
        Command::Pipeline(a) => commands::pipeline(&with_config(a, config)?),
        Command::Metrics(a) => commands::metrics(&with_config(a, config)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
