use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use energy_arena::api::{self, ArenaState};
use energy_arena::config::ArenaConfig;
use energy_arena::metrics::{build_report, render_table, tally, ReportRow};
use energy_arena::simulate::{registry_for, simulate, write_log, VoterModel};
use energy_arena::store::{replay, validate_log, LogWriter, ReplayMode};

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "energy-arena", version, about = "Energy-aware LLM evaluation arena")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP arena.
    Serve {
        /// JSON config file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Listen address, overriding the config.
        #[arg(long)]
        listen: Option<String>,
        /// Battle log, overriding the config.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print the metrics report for a battle log.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        /// Restrict to one family.
        #[arg(long)]
        family: Option<String>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Fail on the first malformed line instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Write a synthetic battle log drawn from known voter behaviour.
    Simulate {
        #[arg(long)]
        n: usize,
        /// Initial win rate of the large model.
        #[arg(long)]
        wl: f64,
        /// Initial win rate of the small model.
        #[arg(long)]
        ws: f64,
        /// Tie rate.
        #[arg(long)]
        t: f64,
        /// Probability that a prompted user switches to the small model.
        #[arg(long)]
        ec: f64,
        /// Comma-separated family ids; the four default families when omitted.
        #[arg(long, value_delimiter = ',')]
        families: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every line of a battle log against the record invariants.
    Validate {
        #[arg(long)]
        log: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Serve { config, listen, log } => serve(config, listen, log),
        Command::Analyze {
            log,
            family,
            format,
            strict,
        } => analyze(&log, family.as_deref(), format, strict),
        Command::Simulate {
            n,
            wl,
            ws,
            t,
            ec,
            families,
            seed,
            out,
        } => run_simulate(
            n,
            VoterModel {
                w_l: wl,
                w_s: ws,
                t,
                e_c: ec,
            },
            families,
            seed,
            &out,
        ),
        Command::Validate { log } => validate(&log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

type CliResult = Result<(), (u8, String)>;

fn runtime<E: std::fmt::Display>(e: E) -> (u8, String) {
    (EXIT_RUNTIME, e.to_string())
}

fn config_err<E: std::fmt::Display>(e: E) -> (u8, String) {
    (EXIT_CONFIG, e.to_string())
}

fn serve(config: Option<PathBuf>, listen: Option<String>, log: Option<PathBuf>) -> CliResult {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();

    let mut raw = match &config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
            (ArenaConfig::from_json_str(&text).map_err(config_err)?, Some(text))
        }
        None => (ArenaConfig::default(), None),
    };
    if let Some(addr) = listen {
        raw.0.listen_address = addr;
    }
    if let Some(path) = log {
        raw.0.log_path = path;
    }
    let validated = raw.0.validate_with_source(raw.1.as_deref()).map_err(config_err)?;
    let writer = LogWriter::open(&validated.config.log_path).map_err(config_err)?;
    let state = Arc::new(ArenaState::from_config(&validated, writer).map_err(config_err)?);
    let app = api::router(Arc::clone(&state), validated.config.ui_origin.as_deref());

    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(validated.listen)
            .await
            .map_err(config_err)?;
        let addr = listener.local_addr().map_err(runtime)?;
        eprintln!("energy-arena listening on http://{addr}");

        let sweeper = {
            let state = Arc::clone(&state);
            let every = (state.idle_timeout / 4).clamp(Duration::from_millis(100), Duration::from_secs(60));
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(every);
                loop {
                    tick.tick().await;
                    let out = state.sweep();
                    if out.abandoned + out.evicted > 0 {
                        tracing::info!(abandoned = out.abandoned, evicted = out.evicted, "session sweep");
                    }
                }
            })
        };
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(runtime)?;
        sweeper.abort();
        state.log.sync().map_err(runtime)?;
        eprintln!("energy-arena stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn analyze(log: &Path, family: Option<&str>, format: Format, strict: bool) -> CliResult {
    let mode = if strict {
        ReplayMode::Strict
    } else {
        ReplayMode::Lenient
    };
    let replayed = replay(log, mode).map_err(runtime)?;
    for w in &replayed.warnings {
        eprintln!("warning: {}: {w}", log.display());
    }
    let report = build_report(&replayed.records);
    match family {
        None => match format {
            Format::Json => println!("{}", report.to_json_pretty()),
            Format::Table => print!("{}", report.to_table()),
        },
        Some(id) => {
            let row = report
                .row(id)
                .cloned()
                .unwrap_or_else(|| ReportRow::from_tally(tally(&replayed.records, Some(id))));
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&row).map_err(runtime)?),
                Format::Table => print!("{}", render_table(&[(id, &row)])),
            }
        }
    }
    Ok(())
}

fn run_simulate(n: usize, truth: VoterModel, families: Vec<String>, seed: u64, out: &Path) -> CliResult {
    let known = ArenaConfig::mock().validate().map_err(runtime)?.registry;
    let registry = if families.is_empty() {
        known
    } else {
        registry_for(&families, &known).map_err(usage)?
    };
    let records = simulate(&registry, truth, n, seed).map_err(usage)?;
    write_log(out, &records).map_err(runtime)?;
    eprintln!("wrote {} battles to {}", records.len(), out.display());
    Ok(())
}

fn usage<E: std::fmt::Display>(e: E) -> (u8, String) {
    (EXIT_USAGE, e.to_string())
}

fn validate(log: &Path) -> CliResult {
    let report = validate_log(log).map_err(runtime)?;
    for v in &report.violations {
        println!("{}: {v}", log.display());
    }
    if report.is_clean() {
        println!("{}: {} records, no violations", log.display(), report.records_checked);
        Ok(())
    } else {
        Err((EXIT_RUNTIME, format!("{} violation(s)", report.violations.len())))
    }
}
