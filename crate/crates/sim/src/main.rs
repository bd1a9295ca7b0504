use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use wheelhouse_sim::{generate, render_table, replay, Endpoints, ReplayError, ReplayOptions, RunReport, Scenario};

#[derive(Parser)]
#[command(name = "sim", about = "Classroom simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded scenario file.
    Generate {
        /// table1, deadzone or confusion.
        template: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replay a scenario against running services.
    Replay {
        scenario: PathBuf,
        #[arg(long)]
        endpoints: PathBuf,
        /// Exit non-zero on any divergence.
        #[arg(long)]
        strict: bool,
        /// Permit a non-scripted model backend.
        #[arg(long)]
        allow_live: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render a saved run report.
    Report {
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

fn write_or_print(output: Option<PathBuf>, text: &str) -> Result<(), String> {
    match output {
        Some(path) => std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

async fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Generate { template, seed, output } => {
            let scenario = generate(&template, seed).map_err(|e| e.to_string())?;
            write_or_print(output, &scenario.to_json())
        }
        Command::Replay { scenario, endpoints, strict, allow_live, output } => {
            let text = std::fs::read_to_string(&scenario).map_err(|e| format!("{}: {e}", scenario.display()))?;
            let scenario = Scenario::from_json(&text).map_err(|e| format!("{}: {e}", scenario.display()))?;
            let endpoints = Endpoints::load(&endpoints).map_err(|e| e.to_string())?;
            let options = ReplayOptions { strict, allow_live, ..ReplayOptions::default() };
            let (report, failure) = match replay(&scenario, &endpoints, &options).await {
                Ok(r) => (r, None),
                Err(ReplayError::DivergenceFailure(r)) => {
                    let msg = format!("{} divergences", r.divergences.len());
                    (*r, Some(msg))
                }
                Err(e) => return Err(e.to_string()),
            };
            eprint!("{}", render_table(&report));
            if let Some(path) = output {
                let json = serde_json::to_string_pretty(&report).expect("reports serialize");
                std::fs::write(&path, json).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            failure.map_or(Ok(()), Err)
        }
        Command::Report { run, format } => {
            let text = std::fs::read_to_string(&run).map_err(|e| format!("{}: {e}", run.display()))?;
            let report: RunReport = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", run.display()))?;
            match format {
                Format::Table => print!("{}", render_table(&report)),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize")),
            }
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sim: {e}");
            ExitCode::FAILURE
        }
    }
}
