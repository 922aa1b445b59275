//! `hivemind`: serve the services, load seed files, train networks and run
//! simulator scenarios.
//!
//! Exit codes: 0 on success, 1 when a command fails, 2 for usage errors.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hivemind_core::seed::{import_seed, ImportError};
use hivemind_core::store::Store;
use hivemind_server::wire::{AnnMeta, TrainRequest};
use hivemind_server::{router, ApiClient, BackgroundServer, ClientError};
use hivemind_sim::{render_log, run_scenario, RunStatus, Scenario, SimError};
use tracing::{info, Level};

const DEFAULT_LISTEN: &str = "127.0.0.1:7070";

#[derive(Debug, Parser)]
#[command(
    name = "hivemind",
    version,
    about = "Mediator between concepts, networks and machines"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, env = "HIVEMIND_LOG", default_value = "info")]
    log_level: Level,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the HTTP API until interrupted.
    Serve {
        /// Store directory; created if its parent exists. Without one the store lives in memory.
        #[arg(long, env = "HIVEMIND_STORE")]
        store: Option<PathBuf>,
        #[arg(long, env = "HIVEMIND_LISTEN", default_value = DEFAULT_LISTEN)]
        listen: SocketAddr,
    },
    /// Load a seed file through the service API.
    Import {
        #[arg(long)]
        seed_file: PathBuf,
        #[command(flatten)]
        target: Target,
    },
    /// Train a network from a JSON request and optionally upload it.
    Train {
        /// A file holding `{"config": ..., "dataset": [...]}`.
        #[arg(long)]
        request: PathBuf,
        /// Upload the result under this name.
        #[arg(long)]
        upload: Option<String>,
        #[arg(long, default_value = "", requires = "upload")]
        description: String,
        #[command(flatten)]
        target: Target,
    },
    /// Simulator scenarios.
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Debug, Args)]
struct Target {
    /// Write to the store directly instead of calling a running server.
    #[arg(long)]
    direct: bool,
    /// Store directory for `--direct`; in memory when absent.
    #[arg(long, env = "HIVEMIND_STORE", requires = "direct")]
    store: Option<PathBuf>,
    /// Address of the running server.
    #[arg(long, env = "HIVEMIND_LISTEN", default_value = DEFAULT_LISTEN, conflicts_with = "direct")]
    listen: String,
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    /// Run a scenario and print its log as NDJSON.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Write the log here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a scenario and compare with a recorded log.
    Verify {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Defaults to `<scenario>.seed<seed>.ndjson` next to the scenario file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// A scenario file, or the name of one under `./scenarios`.
    #[arg(long)]
    scenario: String,
    /// PRNG seed; the scenario's own seed when absent.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Store(#[from] hivemind_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Api(#[from] ClientError),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Import { path: PathBuf, source: ImportError },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Failed(String),
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn client_for(target: &Target) -> Result<ApiClient, CliError> {
    if target.direct {
        let store = open_store(target.store.as_deref())?;
        return Ok(ApiClient::in_process(router(Arc::new(store))));
    }
    let base = if target.listen.contains("://") {
        target.listen.clone()
    } else {
        format!("http://{}", target.listen)
    };
    Ok(ApiClient::http(&base)?)
}

fn open_store(path: Option<&Path>) -> Result<Store, CliError> {
    match path {
        Some(p) => Ok(Store::open(p)?),
        None => Ok(Store::in_memory()),
    }
}

fn serve(store: Option<PathBuf>, listen: SocketAddr) -> Result<(), CliError> {
    let store = Arc::new(open_store(store.as_deref())?);
    if store.snapshot().seq() == 0 {
        info!("store is empty");
    }
    let io = |source| CliError::Io {
        path: PathBuf::from(listen.to_string()),
        source,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen).await.map_err(io)?;
        info!("listening on http://{}", listener.local_addr().map_err(io)?);
        hivemind_server::serve(listener, store, async {
            let _ = tokio::signal::ctrl_c().await;
            info!("shutting down");
        })
        .await
        .map_err(io)
    })
}

fn import(seed_file: &Path, target: &Target) -> Result<(), CliError> {
    let text = read(seed_file)?;
    let wrap = |source| CliError::Import {
        path: seed_file.to_path_buf(),
        source,
    };
    let report = if target.direct {
        let store = open_store(target.store.as_deref())?;
        import_seed(&mut &store, &text).map_err(wrap)?
    } else {
        let client = client_for(target)?;
        import_seed(&mut &client, &text).map_err(wrap)?
    };
    println!("{}", serde_json::to_string(&report).expect("reports serialize"));
    Ok(())
}

fn train(request: &Path, upload: Option<String>, description: String, target: &Target) -> Result<(), CliError> {
    let mut req: TrainRequest = serde_json::from_str(&read(request)?).map_err(|source| CliError::Json {
        path: request.to_path_buf(),
        source,
    })?;
    if let Some(name) = upload {
        req.upload = Some(AnnMeta { name, description });
    }
    let result = client_for(target)?.train(&req)?;
    info!(
        epochs = result.epochs,
        final_error = result.final_error,
        converged = result.converged,
        "trained"
    );
    println!("{}", serde_json::to_string(&result).expect("results serialize"));
    Ok(())
}

fn scenario_path(arg: &str) -> PathBuf {
    let direct = PathBuf::from(arg);
    if direct.is_file() {
        return direct;
    }
    Path::new("scenarios").join(format!("{arg}.json"))
}

/// Runs a scenario against a private in-memory server, seeded over HTTP.
fn fresh_run(args: &ScenarioArgs) -> Result<(PathBuf, u64, hivemind_sim::RunOutcome), CliError> {
    let path = scenario_path(&args.scenario);
    let (scenario, dir) = Scenario::load(&path)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let server =
        BackgroundServer::start(Arc::new(Store::in_memory()), ([127, 0, 0, 1], 0).into()).map_err(|source| {
            CliError::Io {
                path: PathBuf::from("127.0.0.1:0"),
                source,
            }
        })?;
    let client = ApiClient::http(&server.base_url())?;
    for seed_file in scenario.seed_paths(&dir) {
        let report = import_seed(&mut &client, &read(&seed_file)?).map_err(|source| CliError::Import {
            path: seed_file.clone(),
            source,
        })?;
        info!(file = %seed_file.display(), ?report, "seeded");
    }
    let outcome = run_scenario(&client, &scenario, seed)?;
    info!(status = ?outcome.status, ticks = outcome.ticks, "run finished");
    Ok((path, seed, outcome))
}

fn sim_run(args: &ScenarioArgs, out: Option<PathBuf>) -> Result<(), CliError> {
    let (_, _, outcome) = fresh_run(args)?;
    let text = render_log(&outcome.log);
    match out {
        Some(p) => std::fs::write(&p, &text).map_err(|source| CliError::Io { path: p, source })?,
        None => print!("{text}"),
    }
    match outcome.status {
        RunStatus::Done => Ok(()),
        RunStatus::Failed => Err(CliError::Failed(format!(
            "run failed after {} ticks: {}",
            outcome.ticks,
            outcome.reason.unwrap_or_default()
        ))),
    }
}

fn sim_verify(args: &ScenarioArgs, log: Option<PathBuf>) -> Result<(), CliError> {
    let (path, seed, outcome) = fresh_run(args)?;
    let log = log.unwrap_or_else(|| {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        path.with_file_name(format!("{stem}.seed{seed}.ndjson"))
    });
    let recorded = read(&log)?;
    let fresh = render_log(&outcome.log);
    if fresh == recorded {
        println!("{}: {} lines match", log.display(), fresh.lines().count());
        return Ok(());
    }
    let mut a = recorded.lines();
    let mut b = fresh.lines();
    let mut n = 1;
    loop {
        match (a.next(), b.next()) {
            (Some(x), Some(y)) if x == y => n += 1,
            (x, y) => {
                return Err(CliError::Failed(format!(
                    "{} differs at line {n}\n  recorded: {}\n  fresh:    {}",
                    log.display(),
                    x.unwrap_or("<end>"),
                    y.unwrap_or("<end>")
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_max_level(cli.log_level)
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Serve { store, listen } => serve(store, listen),
        Command::Import { seed_file, target } => import(&seed_file, &target),
        Command::Train {
            request,
            upload,
            description,
            target,
        } => train(&request, upload, description, &target),
        Command::Sim(SimCommand::Run { scenario, out }) => sim_run(&scenario, out),
        Command::Sim(SimCommand::Verify { scenario, log }) => sim_verify(&scenario, log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
