//! `finsent` command-line entry point.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use finsent::expected_return::ModelKind;

use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, Outcome};

#[derive(Parser, Debug)]
#[command(name = "finsent", version, about = "Event-study and disclosure-sentiment toolkit")]
struct Cli {
    /// TOML run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random component.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Event-window half-widths, e.g. `5,3,1`.
    #[arg(long, global = true, value_delimiter = ',')]
    windows: Option<Vec<usize>>,

    /// Normal-return model: constant_mean, market or fama_french.
    #[arg(long, global = true)]
    model: Option<ModelKind>,

    /// Ridge penalty on standardized predictors.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Abnormal returns, CARs and CAARs around each filing.
    EventStudy,
    /// Cross-sectional regressions of CARs on sentiment features.
    Regress,
    /// Daily returns for every instrument in the prices file.
    Returns,
    /// Train, evaluate or measure agreement for the text classifier.
    Classify {
        #[command(subcommand)]
        action: ClassifyAction,
    },
}

#[derive(Subcommand, Debug)]
enum ClassifyAction {
    Train,
    Eval,
    Kappa,
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        windows: cli.windows.clone(),
        model: cli.model,
        lambda: cli.lambda,
        out: cli.out.clone(),
    });
    log::info!("running {:?} into {}", cli.command, cfg.output_dir.display());
    match &cli.command {
        Command::EventStudy => commands::event_study_cmd(&cfg),
        Command::Regress => commands::regress_cmd(&cfg),
        Command::Returns => commands::returns_cmd(&cfg),
        Command::Classify { action } => match action {
            ClassifyAction::Train => commands::classify_train_cmd(&cfg),
            ClassifyAction::Eval => commands::classify_eval_cmd(&cfg),
            ClassifyAction::Kappa => commands::classify_kappa_cmd(&cfg),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FINSENT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if outcome == Outcome::Partial {
                eprintln!("finished with partial failures; see manifest.json");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
