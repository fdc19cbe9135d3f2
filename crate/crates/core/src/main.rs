use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dmv::config::{Overrides, RunConfig};
use dmv::embed::ProviderKind;
use dmv::pipeline::{Pipeline, PipelineError};

/// Geolocation-aware risk-score regression: ingest survey records, build
/// features and embeddings, train a random forest, validate and ablate.
#[derive(Parser)]
#[command(name = "dmv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the input CSV against the schema and write table.dmv.
    Ingest(Common),
    /// Fit imputation, selection, encoders and scalers; write prep.dmvp.
    Preprocess(Common),
    /// Embed every record's text fields into embeddings.cache.
    Embed(Common),
    /// Train the forest on the hold-out training rows; write model.dmvf.
    Train(Common),
    /// Hold-out and k-fold metrics, residuals and plots; write report.json.
    Evaluate(Common),
    /// Paired with/without feature-group runs merged into report.json.
    Ablate(Common),
    /// All stages in order.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Seed for splits, folds, forests and the local embedder.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for every artifact.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Embedding provider for the embedding method.
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    /// Leave latitude/longitude out of training and evaluation.
    #[arg(long)]
    no_geo: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Local,
    Remote,
}

fn execute(command: Command) -> Result<(), PipelineError> {
    let (stage, common) = match command {
        Command::Ingest(c) => ("ingest", c),
        Command::Preprocess(c) => ("preprocess", c),
        Command::Embed(c) => ("embed", c),
        Command::Train(c) => ("train", c),
        Command::Evaluate(c) => ("evaluate", c),
        Command::Ablate(c) => ("ablate", c),
        Command::Run(c) => ("run", c),
    };
    let mut config = RunConfig::load(&common.config)?;
    config.apply(&Overrides {
        seed: common.seed,
        out: common.out,
        provider: common.provider.map(|p| match p {
            Provider::Local => ProviderKind::Local,
            Provider::Remote => ProviderKind::Remote,
        }),
        no_geo: common.no_geo,
    });
    let pipeline = Pipeline::new(config)?;
    match stage {
        "ingest" => {
            let t = pipeline.ingest()?;
            eprintln!("ingested {} rows", t.n_rows());
        }
        "preprocess" => {
            let s = pipeline.preprocess()?;
            eprintln!("selected {} columns", s.selected.len());
        }
        "embed" => {
            let n = pipeline.embed()?;
            eprintln!("{n} cached embeddings");
        }
        "train" => {
            let m = pipeline.train()?;
            eprintln!("trained {} trees on {} features", m.trees.len(), m.feature_names.len());
        }
        "evaluate" | "ablate" | "run" => {
            let report = match stage {
                "evaluate" => pipeline.evaluate()?,
                "ablate" => pipeline.ablate()?,
                _ => pipeline.run()?,
            };
            for (method, m) in &report.holdout.metrics {
                eprintln!(
                    "{method}: mse={:.6} mae={:.6} r2={:.4} evs={:.4}",
                    m.mse, m.mae, m.r2, m.evs
                );
            }
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
