use clap::Parser;
use pkchat_service::cli::{init_logging, run, Cli};

fn main() {
    init_logging();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
