//! `xnlp`: one-shot prediction, task listing, SEL parsing, serving and
//! evaluation from the command line.
//!
//! stdout carries only the requested payload; diagnostics go to stderr.
//! Exit codes: 0 success, 1 domain error (`error[<code>]: ...` on stderr),
//! 2 usage or configuration error.

use std::io::{IsTerminal, Read};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use xnlp_core::eval::{echo_gold_script, evaluate, load_instances, EvalError, EvalReport};
use xnlp_core::export::to_brat_standoff;
use xnlp_core::gateway::{BackendConfig, BackendKind, Gateway, GatewayError};
use xnlp_core::prompt::UserRequest;
use xnlp_core::registry::{load_builtin_catalog, RegistryError, TaskRegistry, TaskSpec};
use xnlp_core::sel::{self, Tier};
use xnlp_core::session::{Orchestrator, PipelineConfig, SessionError, SessionStatus, SessionStore, DEFAULT_TTL};
use xnlp_server::{ApiError, ErrorCode, ServerConfig, StartupError, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "xnlp", version, about = "Structured NLP over chat LLMs")]
struct Cli {
    /// TOML file of user-defined tasks, merged over the built-in catalog.
    #[arg(long, global = true, env = "XNLP_CATALOG")]
    catalog: Option<PathBuf>,
    /// Log more to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the task catalog.
    Tasks {
        #[command(subcommand)]
        command: TasksCommand,
    },
    /// Run one prediction and print the result.
    Predict(PredictArgs),
    /// Parse structure-language text and print it as JSON.
    Parse(ParseArgs),
    /// Start the HTTP API.
    Serve(ServeArgs),
    /// Score a task on a data file with exact structure match.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum TasksCommand {
    /// One line per task: id, tier, category, name.
    List {
        /// Print the full specs as a JSON array instead.
        #[arg(long)]
        json: bool,
    },
    /// Print one task spec as JSON.
    Show { id: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Http,
    Mock,
    /// Mock that answers every eval instance with its own gold (eval only).
    EchoGold,
}

#[derive(Args)]
struct BackendArgs {
    /// Overrides XNLP_BACKEND.
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Mock script file; overrides XNLP_MOCK_SCRIPT.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Chat-completions base URL; overrides XNLP_LLM_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    /// Overrides XNLP_LLM_MODEL.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Standoff,
    Sel,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    task: String,
    #[arg(long)]
    text: String,
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Span,
    Pair,
    HyperPair,
}

impl From<TierArg> for Tier {
    fn from(t: TierArg) -> Tier {
        match t {
            TierArg::Span => Tier::Span,
            TierArg::Pair => Tier::Pair,
            TierArg::HyperPair => Tier::HyperPair,
        }
    }
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long, value_enum)]
    tier: TierArg,
    /// File to read, or `-` for stdin.
    #[arg(long, default_value = "-")]
    input: String,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory for session files; in memory when absent.
    #[arg(long)]
    session_store: Option<PathBuf>,
    /// Origin allowed by CORS, or `*`.
    #[arg(long)]
    cors_origin: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    task: String,
    /// JSON Lines file of `{"text": ..., "gold": ...}` records.
    #[arg(long)]
    data: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

/// Why a command failed, and how to exit.
#[derive(Debug)]
enum Failure {
    Domain { code: ErrorCode, message: String },
    Usage(String),
}

impl Failure {
    fn domain(code: ErrorCode, message: impl Into<String>) -> Self {
        Failure::Domain {
            code,
            message: message.into(),
        }
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure::domain(e.code(), e.body.message)
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        ApiError::from(e).into()
    }
}

impl From<RegistryError> for Failure {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::CatalogFile { .. } | RegistryError::InvalidCatalogTask { .. } => {
                Failure::Usage(e.to_string())
            }
            other => ApiError::from(other).into(),
        }
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            other => Failure::domain(ErrorCode::BackendUnavailable, other.to_string()),
        }
    }
}

impl From<StartupError> for Failure {
    fn from(e: StartupError) -> Self {
        match e {
            StartupError::Registry(e) => e.into(),
            StartupError::Gateway(e) => e.into(),
            StartupError::Store(e) => e.into(),
            other => Failure::domain(ErrorCode::BackendUnavailable, other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::domain(ErrorCode::ValidationFailed, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = match (cli.verbose, &cli.command) {
        (0, Command::Serve(_)) => "info",
        (0, _) => "warn",
        (1, _) => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain { code, message }) => {
            eprintln!("error[{}]: {message}", code.as_str());
            ExitCode::from(1)
        }
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

async fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Tasks { command } => tasks(cli.catalog.as_deref(), command),
        Command::Predict(args) => predict(cli.catalog.as_deref(), args).await,
        Command::Parse(args) => parse(args),
        Command::Serve(args) => serve(cli.catalog, args).await,
        Command::Eval(args) => eval(cli.catalog.as_deref(), args).await,
    }
}

fn registry(catalog: Option<&Path>) -> Result<TaskRegistry, Failure> {
    let builtin = load_builtin_catalog()?;
    Ok(match catalog {
        Some(path) => TaskRegistry::with_user_file(builtin, path.to_path_buf())?,
        None => TaskRegistry::new(builtin),
    })
}

fn find_task(registry: &TaskRegistry, id: &str) -> Result<TaskSpec, Failure> {
    registry
        .get(id)
        .ok_or_else(|| RegistryError::NotFound(id.to_string()).into())
}

fn backend_config(args: &BackendArgs) -> Result<BackendConfig, Failure> {
    let mut cfg = BackendConfig::from_env()?;
    if let Some(e) = &args.endpoint {
        cfg.endpoint = Some(e.clone());
        cfg.kind = BackendKind::Http;
    }
    if let Some(m) = &args.model {
        cfg.model = m.clone();
    }
    if let Some(p) = &args.mock_script {
        cfg.mock_script = Some(p.clone());
        if args.backend.is_none() {
            cfg.kind = BackendKind::Mock;
        }
    }
    match args.backend {
        Some(Backend::Http) => cfg.kind = BackendKind::Http,
        Some(Backend::Mock) => cfg.kind = BackendKind::Mock,
        Some(Backend::EchoGold) => {
            return Err(Failure::Usage("--backend echo-gold is only valid for eval".into()))
        }
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::domain(ErrorCode::ValidationFailed, e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn tasks(catalog: Option<&Path>, command: TasksCommand) -> Result<(), Failure> {
    let registry = registry(catalog)?;
    match command {
        TasksCommand::List { json: true } => print_json(&registry.list()),
        TasksCommand::List { json: false } => {
            for t in registry.list() {
                println!("{}\t{}\t{}\t{}", t.id, t.tier, t.category, t.name);
            }
            Ok(())
        }
        TasksCommand::Show { id } => print_json(&find_task(&registry, &id)?),
    }
}

async fn predict(catalog: Option<&Path>, args: PredictArgs) -> Result<(), Failure> {
    let registry = registry(catalog)?;
    find_task(&registry, &args.task)?;
    let gateway = Gateway::from_config(&backend_config(&args.backend)?)?;
    let orch = Orchestrator::new(
        registry,
        gateway,
        SessionStore::in_memory(DEFAULT_TTL),
        PipelineConfig::default(),
    );
    let session = orch
        .start_session(UserRequest {
            task_id: args.task,
            input_text: args.text,
            language: args.language,
            domain: args.domain,
        })
        .await?;
    for issue in session.issues() {
        eprintln!("warning: {issue}");
    }
    let Some(doc) = session.current.as_ref().filter(|_| session.status != SessionStatus::Failed) else {
        return Err(Failure::domain(
            ErrorCode::ValidationFailed,
            "the model's reply contained no usable structure",
        ));
    };
    for item in &doc.unanchored {
        eprintln!("warning: {} `{}` not found in the text: {}", item.label, item.fragments.join(" .. "), item.reason);
    }
    match args.format {
        Format::Json => print_json(&xnlp_core::export::to_render_json(doc)),
        Format::Standoff => {
            let text = to_brat_standoff(doc).map_err(|e| Failure::domain(ErrorCode::ValidationFailed, e.to_string()))?;
            print!("{text}");
            Ok(())
        }
        Format::Sel => {
            let structure = session.current_structure.as_ref().expect("prediction has a structure");
            let text = sel::serialize(structure).map_err(|e| Failure::domain(ErrorCode::ValidationFailed, e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn parse(args: ParseArgs) -> Result<(), Failure> {
    let mut text = String::new();
    let read = if args.input == "-" {
        std::io::stdin().read_to_string(&mut text).map(|_| ())
    } else {
        std::fs::read_to_string(&args.input).map(|t| text = t)
    };
    read.map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.input)))?;
    let out = sel::parse(&text, args.tier.into());
    for issue in &out.issues {
        eprintln!("warning: {issue}");
    }
    print_json(&out)
}

async fn serve(catalog: Option<PathBuf>, args: ServeArgs) -> Result<(), Failure> {
    let cfg = ServerConfig {
        addr: SocketAddr::new(args.host, args.port),
        backend: backend_config(&args.backend)?,
        catalog,
        session_store: args.session_store,
        cors_origin: args.cors_origin,
        ..ServerConfig::default()
    };
    xnlp_server::serve(cfg, xnlp_server::termination_signal()).await?;
    Ok(())
}

async fn eval(catalog: Option<&Path>, args: EvalArgs) -> Result<(), Failure> {
    let registry = registry(catalog)?;
    let spec = find_task(&registry, &args.task)?;
    let instances = load_instances(&args.data, spec.tier)?;
    let gateway = match args.backend.backend {
        Some(Backend::EchoGold) => Gateway::mock(echo_gold_script(&instances)),
        _ => Gateway::from_config(&backend_config(&args.backend)?)?,
    };
    let verdicts = evaluate(&gateway, &spec, &instances, &PipelineConfig::default(), args.concurrency).await;
    let report = EvalReport::from_verdicts(verdicts);
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Failure::domain(ErrorCode::ValidationFailed, e.to_string()))?;
        std::fs::write(path, json + "\n")
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{}", report.to_table());
    Ok(())
}
