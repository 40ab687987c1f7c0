use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use macro_router::error::parse_body;
use macro_router::service::{load_registry, transport_for};
use macro_router::train::{self, TrainError, TrainResult};
use macro_router::{render, router, ApiError, AppState};
use macro_router_core::eval::{evaluate, load_fixtures};
use macro_router_core::pipeline::{Engine, FeedbackSource, HandleOutcome, PipelineConfig};
use macro_router_core::registry::{MacroId, NewMacro, Outcome};

#[derive(Debug, Parser)]
#[command(name = "macro-router", version, about = "Route requests to stored API macros")]
struct Cli {
    /// Config file. Built-in defaults apply when neither this nor the
    /// environment variable is set.
    #[arg(long, global = true, env = "MACRO_ROUTER_CONFIG")]
    config: Option<PathBuf>,
    /// Registry file; overrides `registry_path` from the config.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank macros for an utterance and print the decision.
    Route {
        utterance: String,
        #[arg(long)]
        json: bool,
    },
    /// Route, bind and run the matched macro.
    Exec {
        utterance: String,
        /// Print the plan without sending anything.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        json: bool,
    },
    /// Interactive training session on stdin.
    Train,
    Macros {
        #[command(subcommand)]
        action: MacrosCommand,
    },
    /// Record an outcome for a macro.
    Feedback { id: u64, outcome: Outcome },
    /// Accuracy report over a fixture directory.
    Eval {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long)]
        json: bool,
        /// Write the config with the calibrated threshold to this file.
        #[arg(long)]
        save_config: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Overrides the config port.
        #[arg(long)]
        port: Option<u16>,
        /// Static files served under /ui.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum MacrosCommand {
    List {
        #[arg(long)]
        json: bool,
    },
    /// Add a macro from a JSON file.
    Add {
        file: PathBuf,
    },
    Rm {
        id: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(ApiError::from)?,
        None => PipelineConfig::default(),
    };
    if let Some(r) = &cli.registry {
        config.registry_path = r.clone();
    }
    Ok(config)
}

fn engine(config: &PipelineConfig) -> anyhow::Result<Engine> {
    let registry = load_registry(&config.registry_path)?;
    Ok(Engine::new(registry, config.clone()).map_err(ApiError::from)?)
}

fn save(engine: &Engine, config: &PipelineConfig) -> anyhow::Result<()> {
    engine
        .registry()
        .save(&config.registry_path)
        .map_err(ApiError::from)
        .with_context(|| format!("saving {}", config.registry_path.display()))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Route { utterance, json } => {
            let snapshot = engine(&config)?.snapshot();
            let outcome = snapshot.route(&utterance);
            if json {
                print_json(&outcome);
            } else {
                print!("{}", render::route(&outcome, &snapshot));
            }
        }
        Command::Exec {
            utterance,
            dry_run,
            json,
        } => {
            let mut engine = engine(&config)?;
            let transport = if dry_run { None } else { Some(transport_for(&config)?) };
            let outcome = engine.handle(&utterance, transport.as_deref());
            let ok = match &outcome {
                HandleOutcome::Executed { result, .. } => {
                    save(&engine, &config)?;
                    result.succeeded
                }
                HandleOutcome::DryRun { .. } => true,
                _ => false,
            };
            if json {
                print_json(&outcome);
            } else {
                print!("{}", render::handle(&outcome, &engine.snapshot()));
            }
            if !ok {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Train => {
            let mut engine = engine(&config)?;
            let stdin = std::io::stdin();
            match train::run(&mut engine, stdin.lock(), std::io::stdout()) {
                Ok(TrainResult::Committed(_)) => save(&engine, &config)?,
                Ok(TrainResult::Reused(_)) => {}
                Err(TrainError::Cancelled) => {
                    eprintln!("training cancelled; registry unchanged");
                    return Ok(ExitCode::from(1));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Macros { action } => macros(action, &config)?,
        Command::Feedback { id, outcome } => {
            let mut engine = engine(&config)?;
            let stats = engine
                .record_feedback(MacroId(id), outcome, FeedbackSource::User)
                .map_err(ApiError::from)?;
            save(&engine, &config)?;
            println!(
                "#{id}: {}/{} succeeded, smoothed rate {:.3}",
                stats.successes,
                stats.attempts,
                stats.smoothed_rate()
            );
        }
        Command::Eval {
            fixtures,
            json,
            save_config,
        } => return eval(&fixtures, json, save_config.as_deref(), config),
        Command::Serve { host, port, ui } => {
            let port = port.unwrap_or(config.port);
            let state = Arc::new(AppState::from_config(config)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                println!("listening on http://{}", listener.local_addr()?);
                std::io::stdout().flush()?;
                axum::serve(listener, router(state, ui)).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn macros(action: MacrosCommand, config: &PipelineConfig) -> anyhow::Result<()> {
    let mut engine = engine(config)?;
    match action {
        MacrosCommand::List { json } => {
            if json {
                print_json(&engine.registry().macros());
            } else {
                print!("{}", render::macros(engine.registry()));
            }
        }
        MacrosCommand::Add { file } => {
            let text = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let draft: NewMacro = parse_body(&text)?;
            let name = draft.macro_name.clone();
            let id = engine.add_macro(draft).map_err(ApiError::from)?;
            save(&engine, config)?;
            println!("added #{id} {name}");
        }
        MacrosCommand::Rm { id } => {
            let removed = engine.remove_macro(MacroId(id)).map_err(ApiError::from)?;
            save(&engine, config)?;
            println!("removed #{id} {}", removed.macro_name);
        }
    }
    Ok(())
}

fn eval(dir: &Path, json: bool, save_config: Option<&Path>, mut config: PipelineConfig) -> anyhow::Result<ExitCode> {
    let (registry, utterances) = load_fixtures(dir).map_err(ApiError::from)?;
    let (report, infeasible) = evaluate(&registry, &utterances, &config.stopwords);
    if json {
        print_json(&report);
    } else {
        print!("{}", report.to_table(&registry));
    }
    if let Some(e) = infeasible {
        eprintln!("error: {e}");
        return Ok(ExitCode::from(1));
    }
    if let Some(path) = save_config {
        // Calibration runs on pure cosine. With no feedback history every
        // blended score is α·cos + (1 − α)/2, so the threshold maps the same way.
        config.theta = (config.alpha * report.theta + (1.0 - config.alpha) * 0.5).clamp(0.0, 1.0);
        std::fs::write(path, serde_json::to_string_pretty(&config)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {} with theta {:.4}", path.display(), config.theta);
    }
    Ok(ExitCode::SUCCESS)
}
