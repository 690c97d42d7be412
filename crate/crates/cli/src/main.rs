//! `predi`: the operator command line.
//!
//! Exit codes: 0 success, 1 user error (bad input, config, or rejected
//! data), 2 internal error.

mod args;
mod commands;
mod config;
mod error;
mod logging;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::Ctx;
use crate::config::{parse_level, ConfigLayer, RunConfig};
use crate::error::CliError;

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let file = match &cli.config {
        Some(path) => ConfigLayer::from_file(path)?,
        None => ConfigLayer::default(),
    };
    let env = ConfigLayer::from_env(std::env::vars())?;
    let mut flags = ConfigLayer {
        data_dir: cli.data_dir.clone(),
        log_level: cli.log_level.clone(),
        seed: cli.seed,
        ..ConfigLayer::default()
    };
    if let Command::Serve(s) = &cli.command {
        flags.http_addr = s.http_addr.clone();
        flags.mqtt_addr = s.mqtt_addr.clone();
        flags.thresholds = s.thresholds.clone();
        flags.model = s.model.clone();
        flags.durability = s.durability.map(Into::into);
        flags.webhook = s.webhook.clone();
        flags.alert_id_seed = s.alert_id_seed;
    }
    RunConfig::resolve(flags, env, file)
}

async fn run(cli: Cli, cfg: RunConfig) -> Result<(), CliError> {
    let ctx = Ctx { json: cli.json, seed_flag: cli.seed, cfg };
    match cli.command {
        Command::Serve(_) => commands::serve::run(&ctx).await,
        Command::Train(a) => commands::model::train(&ctx, &a),
        Command::Evaluate(a) => commands::model::evaluate(&ctx, &a),
        Command::Stratify(a) => commands::model::stratify(&ctx, &a),
        Command::Simulate { what } => commands::simulate::run(&ctx, what).await,
        Command::Export(a) => commands::export::run(&ctx, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // --help and --version land here too
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            logging::init(tracing::Level::INFO);
            tracing::error!(kind = e.kind(), error = %e, "startup failed");
            return ExitCode::from(e.exit_code());
        }
    };
    logging::init(parse_level(&cfg.log_level).unwrap_or(tracing::Level::INFO));
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            tracing::error!(error = %e, "cannot start async runtime");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli, cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(kind = e.kind(), error = %e, "command failed");
            ExitCode::from(e.exit_code())
        }
    }
}
