//! `cebnm` — train a two-head digit-pair classifier, steer its attention
//! with contrastive excitation backprop, and run the ACh/NE goal-inference
//! experiments on top of it.

mod commands;
mod settings;

use clap::error::ErrorKind;
use clap::Parser;

fn main() {
    let cli = match settings::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = commands::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
