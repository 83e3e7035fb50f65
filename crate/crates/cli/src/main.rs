mod args;
mod commands;
mod config;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Failure;

fn run() -> Result<(), Failure> {
    let mut argv: Vec<String> = std::env::args().collect();
    if let Some(path) = config::config_path(&argv) {
        let entries = config::load(Path::new(&path)).map_err(Failure::Usage)?;
        argv = config::merge(argv, &entries);
    }
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads {n}: {e}")))?;
    }
    match &cli.command {
        Command::Degrade(d) => commands::degrade(d, &cli.global),
        Command::Restore(r) => commands::restore_cmd(r, &cli.global),
        Command::Analyze(a) => commands::analyze(a, &cli.global),
        Command::Bench(b) => commands::bench(b, &cli.global),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code() as u8)
        }
    }
}
