use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;
use wheelhouse_server::{GatewayConfig, ServerBuilder, Service};

#[derive(Parser)]
#[command(name = "wheelhouse", version, about = "Tutoring services")]
struct Cli {
    #[arg(long, value_enum, default_value_t = LogFormat::Text, global = true)]
    log_format: LogFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run services until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of teaching, autograde, events, feedback.
        #[arg(long, value_delimiter = ',', value_parser = parse_service)]
        only: Vec<Service>,
    },
    /// Load and validate a config file, then exit.
    CheckConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_service(s: &str) -> Result<Service, String> {
    Service::parse(s).ok_or_else(|| format!("unknown service `{s}`"))
}

fn init_logging(format: LogFormat) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stdout);
    match format {
        LogFormat::Text => builder.init(),
        LogFormat::Json => builder.json().init(),
    }
}

async fn stop_signal() {
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()).expect("signal handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = tokio::signal::ctrl_c().await;
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_format);
    match cli.command {
        Command::CheckConfig { config } => match GatewayConfig::load(&config) {
            Ok(_) => {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{}: {e}", config.display());
                ExitCode::FAILURE
            }
        },
        Command::Serve { config, only } => {
            let config = match GatewayConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    tracing::error!(error = %e, "bad config");
                    return ExitCode::FAILURE;
                }
            };
            let mut builder = ServerBuilder::new(config);
            if !only.is_empty() {
                builder = builder.services(only);
            }
            let running = match builder.build() {
                Ok(app) => app.serve().await,
                Err(e) => Err(e),
            };
            let running = match running {
                Ok(r) => r,
                Err(e) => {
                    tracing::error!(error = %e, "startup failed");
                    return ExitCode::FAILURE;
                }
            };
            stop_signal().await;
            tracing::info!("shutting down");
            running.shutdown().await;
            ExitCode::SUCCESS
        }
    }
}
