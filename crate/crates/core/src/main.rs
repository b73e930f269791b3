#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod cli;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cli::Cli::parse();
    cli::dispatch(&cli).into()
}
