use clap::Parser;
use fibermimo::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
