mod args;
mod commands;
mod exit;

use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::{AlignCommand, Cli, Command, IndexCommand};
use exit::Failure;

fn init_logging(verbose: u8, json_diagnostics: bool) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let mut b = env_logger::Builder::new();
    b.filter_level(level).parse_env("STEPGROUND_LOG");
    if json_diagnostics {
        b.format(|buf, record| {
            let line = json!({
                "level": record.level().as_str().to_lowercase(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    b.init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose, cli.json);
    let result = match &cli.command {
        Command::Index(IndexCommand::Build(a)) => commands::index_build(a),
        Command::Align(AlignCommand::Score(a)) => commands::align_score(a),
        Command::Score(a) => commands::score(a),
        Command::Serve(a) => commands::serve(a),
        Command::Probe(a) => commands::probe_cmd(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f, cli.json),
    }
}

fn report(f: Failure, json_diagnostics: bool) -> ExitCode {
    f.report(json_diagnostics)
}
