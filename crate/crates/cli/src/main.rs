mod args;
mod bench;
mod eval;
mod exit;
mod gradcheck;
mod interpolate;
mod run_config;
mod synth;
mod train;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Interpolate(a) => interpolate::run(&a),
        Command::Eval(a) => eval::run(&a),
        Command::Train(a) => train::run(&a),
        Command::Gradcheck(a) => gradcheck::run(&a),
        Command::Bench(a) => bench::run(&a),
        Command::Synth(a) => synth::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match sepkern::parallel::install(|| dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
