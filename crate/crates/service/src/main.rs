use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use folkvae::corpus::Dataset;
use folkvae::vae::{train, Model};
use folkvae_service::config::{LogFormat, ServerConfig};
use folkvae_service::AppState;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "folkvae", version, about = "Euclidean rhythm sketching with a latent-regularised VAE")]
struct Cli {
    /// TOML config file; FOLKVAE_ADDR, FOLKVAE_PORT and FOLKVAE_DATA_DIR override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP and WebSocket API.
    Serve,
    /// Build a dataset manifest from an ABC file.
    Dataset {
        abc: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model offline and write a checkpoint.
    Train {
        abc: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging(format: LogFormat) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stdout);
    match format {
        LogFormat::Json => builder.json().init(),
        LogFormat::Text => builder.init(),
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let config = ServerConfig::load(cli.config.as_deref()).map_err(|e| e.to_string())?;
    init_logging(config.log_format);
    match cli.command {
        Command::Serve => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime.block_on(async {
                let state = Arc::new(AppState::open(config.clone()).map_err(|e| e.to_string())?);
                let listener = folkvae_service::bind(&config).await.map_err(|e| e.to_string())?;
                let shutdown = async {
                    let _ = tokio::signal::ctrl_c().await;
                    tracing::info!("shutting down");
                };
                folkvae_service::serve(listener, state, shutdown).await.map_err(|e| e.to_string())
            })
        }
        Command::Dataset { abc, seed, out } => {
            let text = std::fs::read_to_string(&abc).map_err(|e| format!("{}: {e}", abc.display()))?;
            let dataset = Dataset::from_abc(&text, seed).map_err(|e| e.to_string())?;
            std::fs::write(&out, dataset.to_manifest_json()).map_err(|e| format!("{}: {e}", out.display()))?;
            tracing::info!(measures = dataset.len(), fingerprint = %hex::encode(dataset.fingerprint()), "dataset written");
            Ok(())
        }
        Command::Train { abc, epochs, seed, out } => {
            let text = std::fs::read_to_string(&abc).map_err(|e| format!("{}: {e}", abc.display()))?;
            let mut model_config = config.model.clone();
            let mut training = config.training.clone();
            if let Some(seed) = seed {
                model_config.seed = seed;
            }
            if let Some(epochs) = epochs {
                training.epochs = epochs;
            }
            let dataset = Dataset::from_abc(&text, model_config.seed).map_err(|e| e.to_string())?;
            let (params, _) = train(&dataset, &model_config, &training, |r| {
                tracing::info!(epoch = r.epoch, total = r.total, recon = r.recon, kl = r.kl, reg = r.reg, "epoch");
            })
            .map_err(|e| e.to_string())?;
            let model = Model { config: model_config, training, params, corpus_fingerprint: dataset.fingerprint() };
            std::fs::write(&out, model.to_bytes()).map_err(|e| format!("{}: {e}", out.display()))?;
            tracing::info!(path = %out.display(), "checkpoint written");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("folkvae: {e}");
            ExitCode::FAILURE
        }
    }
}
