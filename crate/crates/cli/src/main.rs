//! `derevrb`: simulate reverberant corpora, train autoencoder priors,
//! dereverberate recordings and score the results.

mod args;
mod dereverb;
mod evaluate;
mod manifest;
mod settings;
mod simulate;
mod train;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate::run(&config, a),
        Command::TrainAe(a) => train::run(config, a),
        Command::Dereverb(a) => dereverb::run(config, a),
        Command::Evaluate(a) => evaluate::run(&config, a),
    }
}
