use clap::Parser;
use mavpoint::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
