mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command, FileConfig, Globals, Merge};
use commands::Failure;

const DEFAULT_THREADS: usize = 4;

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(Failure::Setup)?,
        None => FileConfig::default(),
    };
    init_logging(cli.verbose || file.verbose.unwrap_or(false));
    let threads = cli.threads.or(file.threads).unwrap_or(DEFAULT_THREADS);
    if threads == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    let g = Globals {
        threads,
        seed: cli.seed.or(file.seed),
    };
    match cli.command {
        Command::Ingest(a) => commands::ingest(a.merge(file.ingest), g),
        Command::Compress(a) => commands::compress(a.merge(file.compress), g),
        Command::Decompress(a) => commands::decompress(a.merge(file.decompress), g),
        Command::Metrics(a) => commands::metrics(a.merge(file.metrics), g),
        Command::Split(a) => commands::split(a.merge(file.split), g),
        Command::Score(a) => commands::score(a.merge(file.score), g),
        Command::Sizes(a) => commands::sizes(a.merge(file.sizes)),
        Command::Report(a) => commands::report(a.merge(file.report)),
        Command::StubBackend => commands::stub_backend(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(commands::EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("srcodec: {f}");
            ExitCode::from(f.code())
        }
    }
}
