use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use mortality_core::io::Metadata;

mod args;
mod commands;
mod error;
mod output;

use args::{Cli, Command};
use error::CliError;

fn config(cli: &Cli) -> Metadata {
    let g = &cli.global;
    let command = match &cli.command {
        Command::Simulate(_) => "simulate",
        Command::Fit(_) => "fit",
        Command::Fod(_) => "fod",
        Command::Validate(_) => "validate",
        Command::Reweight(_) => "reweight",
        Command::Stratify(_) => "stratify",
        Command::OracleCheck(_) => "oracle-check",
    };
    [
        ("tool", format!("mortality {}", env!("CARGO_PKG_VERSION"))),
        ("command", command.to_string()),
        ("partition", g.partition.flag().to_string()),
        ("age_threshold", g.age_threshold.to_string()),
        ("variant", g.variant.to_string()),
        ("horizon", g.horizon.to_string()),
        ("z", g.z.to_string()),
        ("interval_form", g.interval_form.flag().to_string()),
        ("format", g.format.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if g.horizon == 0 {
        return Err(CliError::Usage("--horizon must be at least 1".into()));
    }
    if !(g.z > 0.0 && g.z.is_finite()) {
        return Err(CliError::Usage("--z must be positive".into()));
    }
    let md = config(cli);
    let sink = match &cli.command {
        Command::Simulate(a) => commands::simulate(g, a, &md)?,
        Command::Fit(a) => commands::fit(g, a, &md)?,
        Command::Fod(a) => commands::fod(g, a, &md)?,
        Command::Validate(a) => commands::validate(g, a, &md)?,
        Command::Reweight(a) => commands::reweight(g, a, &md)?,
        Command::Stratify(a) => commands::stratify(g, a, &md)?,
        Command::OracleCheck(a) => commands::oracle_check(g, a, &md)?,
    };
    for path in sink.written() {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.record());
            return ExitCode::from(err.exit_code());
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.record());
            ExitCode::from(err.exit_code())
        }
    }
}
