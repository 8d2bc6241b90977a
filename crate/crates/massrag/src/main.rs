use clap::Parser;

use massrag::cli::{dispatch, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
