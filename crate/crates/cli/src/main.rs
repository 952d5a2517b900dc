use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use pulse_cli::{Format, PlanArgs, SimulateArgs};
use pulse_core::service::Service;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "pulse", version, about = "Patient monitoring calls, assessments and planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        /// Service configuration (TOML). `PULSE_DATA_DIR` overrides its data_dir.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        /// Also serve the dashboard bundle at /.
        #[arg(long)]
        with_ui: bool,
        #[arg(long, default_value = "dashboard/dist")]
        ui_dir: PathBuf,
    },
    /// Conduct one scripted call and print the assessment.
    Call {
        /// Service configuration (TOML). `PULSE_DATA_DIR` overrides its data_dir.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        patient: String,
        /// Patient utterances, one per line.
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value = "pulse")]
        flow: String,
        #[arg(long)]
        json: bool,
    },
    Schedule {
        #[command(subcommand)]
        action: ScheduleCommand,
    },
    Econ {
        #[command(subcommand)]
        action: EconCommand,
    },
    Cache {
        #[command(subcommand)]
        action: CacheCommand,
    },
}

#[derive(Subcommand)]
enum ScheduleCommand {
    /// Plan outbound calls for all stored patients; prints CSV.
    Plan {
            /// Service configuration (TOML). `PULSE_DATA_DIR` overrides its data_dir.
            #[arg(long)]
            config: Option<PathBuf>,
        /// Number of periods.
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        capacity: Option<u32>,
        /// CSV with `period,expected` rows.
        #[arg(long)]
        forecast: Option<PathBuf>,
        #[arg(long)]
        spike: Option<f64>,
        /// First period start (RFC 3339); next full hour by default.
        #[arg(long)]
        start: Option<DateTime<Utc>>,
    },
}

#[derive(Subcommand)]
enum EconCommand {
    /// Simulate a cohort under the care-level threshold model.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        patients: Option<u32>,
        #[arg(long)]
        periods: Option<u32>,
        #[arg(long)]
        stabilization: Option<f64>,
        /// Simulation parameters (TOML); flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

#[derive(Subcommand)]
enum CacheCommand {
    /// Prefix-cache accounting per session.
    Report {
            /// Service configuration (TOML). `PULSE_DATA_DIR` overrides its data_dir.
            #[arg(long)]
            config: Option<PathBuf>,
        #[arg(long)]
        session: Option<String>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve {
            config,
            bind,
            with_ui,
            ui_dir,
        } => {
            let config = pulse_cli::load_config(config.as_deref())?;
            let bind = bind.unwrap_or_else(|| config.bind.clone());
            let service = Arc::new(Service::open(config)?);
            service.seed_pilot_patients()?;
            let app = pulse_cli::router(service, with_ui.then_some(ui_dir));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind)
                    .await
                    .with_context(|| format!("binding {bind}"))?;
                tracing::info!("listening on {}", listener.local_addr()?);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
        Command::Call {
            config,
            patient,
            script,
            flow,
            json,
        } => {
            let config = pulse_cli::load_config(config.as_deref())?;
            let outcome = pulse_cli::run_call(config, &patient, &flow, &script)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&outcome)?);
            } else {
                print!("{}", pulse_cli::render_call(&outcome));
            }
        }
        Command::Schedule {
            action:
                ScheduleCommand::Plan {
                    config,
                    horizon,
                    capacity,
                    forecast,
                    spike,
                    start,
                },
        } => {
            let config = pulse_cli::load_config(config.as_deref())?;
            let csv = pulse_cli::plan(
                config,
                PlanArgs {
                    horizon,
                    capacity,
                    forecast: forecast.as_deref(),
                    spike,
                    start,
                },
            )?;
            print!("{csv}");
        }
        Command::Econ {
            action:
                EconCommand::Simulate {
                    seed,
                    patients,
                    periods,
                    stabilization,
                    config,
                    format,
                },
        } => {
            let args = SimulateArgs {
                config: config.as_deref(),
                seed,
                patients,
                periods,
                stabilization,
            };
            print!("{}", pulse_cli::simulate(&args, format)?);
        }
        Command::Cache {
            action: CacheCommand::Report { config, session, format },
        } => {
            let config = pulse_cli::load_config(config.as_deref())?;
            print!("{}", pulse_cli::cache_report(config, session.as_deref(), format)?);
        }
    }
    Ok(())
}
