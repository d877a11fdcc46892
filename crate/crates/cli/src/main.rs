//! `biasspace`: command-line client. Talks to a running service given by
//! `--server`, or starts one in-process on a loopback port.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biasspace_client::{Client, ClientError};
use biasspace_core::debias::{NeutralWords, Ordering};
use biasspace_core::error::ErrorKind;
use biasspace_core::eval::read_outcomes_csv;
use biasspace_core::pipeline::{
    DebiasRequest, EmbeddingSource, EqRequest, HypothesisRequest, LabeledSource, MacRequest, ReportRequest,
    SubspaceRequest,
};
use biasspace_core::wordsets::{bundled, load_category_spec, BUNDLED};
use biasspace_core::{CategorySpec, DebiasPlan, EmbeddingFormat, PcaOptions, Strategy};
use clap::{Args, Parser, Subcommand};

use config::Config;

pub const BUNDLED_PREFIX: &str = "bundled:";

#[derive(Debug)]
pub struct Failure {
    kind: ErrorKind,
    message: String,
}

impl Failure {
    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            kind: ErrorKind::Io,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<biasspace_core::Error> for Failure {
    fn from(e: biasspace_core::Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "biasspace", version, about = "Bias subspaces, joint debiasing and bias metrics for word embeddings")]
struct Cli {
    /// Service URL. Without it an in-process service is started.
    #[arg(long, global = true, env = "BIASSPACE_SERVER")]
    server: Option<String>,
    /// TOML file with default option values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build per-category bias subspaces and optionally compose them.
    Subspace(SubspaceArgs),
    /// Write debiased embeddings and a run manifest.
    Debias(DebiasArgs),
    /// Mean average cosine distance per category, optionally against a baseline.
    EvalMac(MacArgs),
    /// FPED / FNED from per-group confusion counts.
    EvalEq(EqArgs),
    /// Compare individual, random and joint directions against a ground-truth subspace.
    ValidateHypothesis(HypothesisArgs),
    /// Consolidated MAC table over several embeddings or over every strategy.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
struct Inputs {
    /// Embedding file.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// word2vec-text (with "count dim" header) or glove-text.
    #[arg(long)]
    format: Option<String>,
    /// Rescale vectors to unit length after loading.
    #[arg(long)]
    normalize: bool,
    /// Look up a lowercased word when the exact form is missing.
    #[arg(long)]
    lowercase_fallback: bool,
    /// Category spec JSON files, or bundled:NAME for a bundled lexicon.
    #[arg(long = "spec", num_args = 1..)]
    specs: Vec<String>,
}

#[derive(Args, Debug)]
struct SubspaceArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Number of principal components per category.
    #[arg(long)]
    k: Option<usize>,
    /// Also compose the subspaces: sum, mean or josec.
    #[arg(long)]
    strategy: Option<String>,
    /// Remove the global mean of the difference rows before the SVD.
    #[arg(long)]
    double_center: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with code 3 on rank deficiency or a non-unique joint direction.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct DebiasArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// single, seq, sum, mean or josec.
    #[arg(long)]
    strategy: Option<String>,
    /// Components per category: one value for all, or one per spec.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    k: Vec<usize>,
    /// Category order for seq, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "all_orders")]
    order: Vec<String>,
    /// Run every category order (seq); outputs are suffixed by order.
    #[arg(long)]
    all_orders: bool,
    /// Compute every sequential subspace on the input embeddings.
    #[arg(long)]
    frozen_subspaces: bool,
    #[arg(long)]
    double_center: bool,
    /// File with the words to neutralize, one per line (default: every unprotected word).
    #[arg(long)]
    neutral_words: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    out_format: Option<String>,
    /// Fail with exit code 3 instead of skipping degenerate words or sets.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct MacArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Reference embeddings (typically the biased set) for deltas and t-tests.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Write the per-target, per-attribute-set table as CSV.
    #[arg(long)]
    table_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EqArgs {
    /// CSV with header group,tp,fp,tn,fn and one row named "overall".
    #[arg(long)]
    outcomes: PathBuf,
}

#[derive(Args, Debug)]
struct HypothesisArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Spec whose defining sets give the ground-truth subspace.
    #[arg(long)]
    ground_truth: String,
    #[arg(long)]
    k: Option<usize>,
    /// Seed for the random baseline directions (default 42).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    random_vectors: usize,
    #[arg(long)]
    double_center: bool,
    /// Write the 3-D projection of all components as CSV.
    #[arg(long)]
    projection_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Debiased embeddings to compare, as LABEL=PATH.
    #[arg(long = "debiased")]
    debiased: Vec<String>,
    /// Run every sequential order plus SUM, MEAN and JOSEC in memory.
    #[arg(long)]
    pipeline: bool,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    frozen_subspaces: bool,
    #[arg(long)]
    double_center: bool,
    /// Add the hypothesis validation table for this ground-truth spec.
    #[arg(long)]
    ground_truth: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    projection_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    /// Embedding sets kept in memory.
    #[arg(long, default_value_t = 4)]
    max_cached: usize,
}

fn absolute(path: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn read_spec(name: &str) -> Result<CategorySpec, Failure> {
    if let Some(b) = name.strip_prefix(BUNDLED_PREFIX) {
        return bundled(b).ok_or_else(|| {
            Failure::validation(format!("no bundled lexicon '{b}' (available: {})", BUNDLED.join(", ")))
        });
    }
    let path = Path::new(name);
    if !path.is_file() {
        return Err(Failure::validation(format!("{}: spec file not found", path.display())));
    }
    load_category_spec(path).map_err(|e| match e.kind() {
        ErrorKind::Io => Failure::validation(e.to_string()),
        _ => Failure::validation(format!("{}: {e}", path.display())),
    })
}

/// Flags merged with the config file.
struct Resolved {
    source: EmbeddingSource,
    specs: Vec<CategorySpec>,
    lowercase_fallback: bool,
}

fn resolve_inputs(inputs: &Inputs, config: &Config, need_specs: bool) -> Result<Resolved, Failure> {
    let path = inputs
        .embeddings
        .clone()
        .or_else(|| config.embeddings.clone())
        .ok_or_else(|| Failure::validation("--embeddings is required"))?;
    let format = match inputs.format.as_ref().or(config.format.as_ref()) {
        Some(f) => f.parse::<EmbeddingFormat>().map_err(Failure::from)?,
        None => EmbeddingFormat::default(),
    };
    let names: Vec<String> = if inputs.specs.is_empty() {
        config.specs.clone().unwrap_or_default()
    } else {
        inputs.specs.clone()
    };
    if need_specs && names.is_empty() {
        return Err(Failure::validation("at least one --spec is required"));
    }
    let specs = names.iter().map(|n| read_spec(n)).collect::<Result<Vec<_>, _>>()?;
    Ok(Resolved {
        source: EmbeddingSource {
            path: absolute(&path)?,
            format,
            normalize: inputs.normalize || config.normalize.unwrap_or(false),
        },
        specs,
        lowercase_fallback: inputs.lowercase_fallback || config.lowercase_fallback.unwrap_or(false),
    })
}

fn require_k(k: Option<usize>, config: &Config) -> Result<usize, Failure> {
    match k {
        Some(k) => Ok(k),
        None => match config.k.as_deref() {
            Some([k]) => Ok(*k),
            Some(_) => Err(Failure::validation("this command takes a single K")),
            None => Err(Failure::validation("--k is required")),
        },
    }
}

fn optional_path(p: &Option<PathBuf>) -> Result<Option<PathBuf>, Failure> {
    p.as_deref().map(absolute).transpose()
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

async fn subspace(client: &Client, args: SubspaceArgs, config: &Config) -> Result<(), Failure> {
    let inputs = resolve_inputs(&args.inputs, config, true)?;
    let strategy = match args.strategy.as_ref().or(config.strategy.as_ref()) {
        Some(s) => Some(
            s.parse::<Strategy>()?
                .composition()
                .ok_or_else(|| Failure::validation(format!("'{s}' is not a composition strategy (sum, mean, josec)")))?,
        ),
        None => None,
    };
    let req = SubspaceRequest {
        embeddings: inputs.source,
        specs: inputs.specs,
        k: require_k(args.k, config)?,
        strategy,
        pca: PcaOptions {
            double_center: args.double_center || config.double_center.unwrap_or(false),
        },
        lowercase_fallback: inputs.lowercase_fallback,
        out: optional_path(&args.out.or_else(|| config.out.clone()))?,
    };
    let resp = client.subspace(&req).await?;
    warn_all(&resp.warnings);
    print!("{}", resp.text);
    if (args.strict || config.strict.unwrap_or(false)) && resp.has_degeneracy() {
        return Err(Failure {
            kind: ErrorKind::Numerical,
            message: "numerical degeneracy in strict mode".into(),
        });
    }
    Ok(())
}

async fn debias(client: &Client, args: DebiasArgs, config: &Config) -> Result<(), Failure> {
    let inputs = resolve_inputs(&args.inputs, config, true)?;
    let strategy: Strategy = match args.strategy.as_ref().or(config.strategy.as_ref()) {
        Some(s) => s.parse()?,
        None => return Err(Failure::validation("--strategy is required (single, seq, sum, mean, josec)")),
    };
    let k = if args.k.is_empty() {
        config.k.clone().ok_or_else(|| Failure::validation("--k is required"))?
    } else {
        args.k.clone()
    };
    let order_flag = if args.order.is_empty() {
        config.order.clone().unwrap_or_default()
    } else {
        args.order.clone()
    };
    let order_flag = if args.all_orders { Vec::new() } else { order_flag };
    let all_orders = args.all_orders || (args.order.is_empty() && config.all_orders.unwrap_or(false));
    if all_orders && !order_flag.is_empty() {
        return Err(Failure::validation("order and all_orders are mutually exclusive"));
    }
    let order = if all_orders {
        Ordering::All
    } else if order_flag.is_empty() {
        Ordering::AsGiven
    } else {
        Ordering::Explicit(order_flag)
    };
    let neutral = match &args.neutral_words {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
            NeutralWords::Explicit(
                text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
            )
        }
        None => NeutralWords::AllUnprotected,
    };
    let out = args
        .out
        .or_else(|| config.out.clone())
        .ok_or_else(|| Failure::validation("--out is required"))?;
    let out_format = match &args.out_format {
        Some(f) => f.parse()?,
        None => inputs.source.format,
    };
    let plan = DebiasPlan {
        strategy,
        k,
        order,
        neutral,
        frozen_subspaces: args.frozen_subspaces || config.frozen_subspaces.unwrap_or(false),
        pca: PcaOptions {
            double_center: args.double_center || config.double_center.unwrap_or(false),
        },
        lowercase_fallback: inputs.lowercase_fallback,
    };
    let req = DebiasRequest {
        embeddings: inputs.source,
        specs: inputs.specs,
        plan,
        out: absolute(&out)?,
        out_format,
        strict: args.strict || config.strict.unwrap_or(false),
    };
    let resp = client.debias(&req).await?;
    for o in &resp.outputs {
        warn_all(&o.warnings);
    }
    print!("{}", resp.text);
    Ok(())
}

async fn eval_mac(client: &Client, args: MacArgs, config: &Config) -> Result<(), Failure> {
    let inputs = resolve_inputs(&args.inputs, config, true)?;
    let baseline = match &args.baseline {
        Some(p) => Some(EmbeddingSource {
            path: absolute(p)?,
            format: inputs.source.format,
            normalize: false,
        }),
        None => None,
    };
    let req = MacRequest {
        embeddings: inputs.source,
        baseline,
        specs: inputs.specs,
        lowercase_fallback: inputs.lowercase_fallback,
        table_csv: optional_path(&args.table_csv)?,
    };
    let resp = client.eval_mac(&req).await?;
    print!("{}", resp.text);
    Ok(())
}

async fn eval_eq(client: &Client, args: EqArgs) -> Result<(), Failure> {
    let file = std::fs::File::open(&args.outcomes)
        .map_err(|e| Failure::io(format!("{}: {e}", args.outcomes.display())))?;
    let (groups, overall) = read_outcomes_csv(file)
        .map_err(|e| Failure { kind: e.kind(), message: format!("{}: {e}", args.outcomes.display()) })?;
    let resp = client.eval_eq(&EqRequest { groups, overall }).await?;
    print!("{}", resp.text);
    Ok(())
}

async fn validate_hypothesis(client: &Client, args: HypothesisArgs, config: &Config) -> Result<(), Failure> {
    let inputs = resolve_inputs(&args.inputs, config, true)?;
    let req = HypothesisRequest {
        embeddings: inputs.source,
        specs: inputs.specs,
        ground_truth: read_spec(&args.ground_truth)?,
        k: require_k(args.k, config)?,
        seed: args.seed.or(config.seed).unwrap_or(42),
        random_vectors: args.random_vectors,
        pca: PcaOptions {
            double_center: args.double_center || config.double_center.unwrap_or(false),
        },
        lowercase_fallback: inputs.lowercase_fallback,
        projection_csv: optional_path(&args.projection_csv)?,
    };
    let resp = client.validate_hypothesis(&req).await?;
    print!("{}", resp.text);
    Ok(())
}

async fn report(client: &Client, args: ReportArgs, config: &Config) -> Result<(), Failure> {
    let inputs = resolve_inputs(&args.inputs, config, true)?;
    let debiased = args
        .debiased
        .iter()
        .map(|d| {
            let (label, path) = d
                .split_once('=')
                .ok_or_else(|| Failure::validation(format!("--debiased expects LABEL=PATH, got '{d}'")))?;
            Ok(LabeledSource {
                label: label.to_string(),
                source: EmbeddingSource {
                    path: absolute(Path::new(path))?,
                    format: inputs.source.format,
                    normalize: false,
                },
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let k = match args.k {
        Some(k) => Some(k),
        None if args.pipeline || args.ground_truth.is_some() => Some(require_k(None, config)?),
        None => None,
    };
    let req = ReportRequest {
        embeddings: inputs.source,
        specs: inputs.specs,
        debiased,
        pipeline: args.pipeline,
        k,
        frozen_subspaces: args.frozen_subspaces || config.frozen_subspaces.unwrap_or(false),
        pca: PcaOptions {
            double_center: args.double_center || config.double_center.unwrap_or(false),
        },
        lowercase_fallback: inputs.lowercase_fallback,
        ground_truth: args.ground_truth.as_deref().map(read_spec).transpose()?,
        seed: args.seed.or(config.seed).unwrap_or(42),
        csv_out: optional_path(&args.csv)?,
        projection_csv: optional_path(&args.projection_csv)?,
    };
    let resp = client.report(&req).await?;
    print!("{}", resp.text);
    Ok(())
}

async fn serve(args: ServeArgs) -> Result<(), Failure> {
    let listener = tokio::net::TcpListener::bind(&args.listen)
        .await
        .map_err(|e| Failure::io(format!("{}: {e}", args.listen)))?;
    eprintln!("listening on http://{}", listener.local_addr().map_err(|e| Failure::io(e.to_string()))?);
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    biasspace_service::serve(listener, biasspace_service::AppState::new(args.max_cached), shutdown)
        .await
        .map_err(|e| Failure::io(e.to_string()))
}

/// Client for `--server`, or for a service started on a loopback port.
async fn connect(server: Option<String>) -> Result<Client, Failure> {
    if let Some(url) = server {
        return Ok(Client::new(url));
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| Failure::io(format!("cannot start the in-process service: {e}")))?;
    let addr = listener.local_addr().map_err(|e| Failure::io(e.to_string()))?;
    tokio::spawn(biasspace_service::serve(
        listener,
        biasspace_service::AppState::new(2),
        std::future::pending(),
    ));
    Ok(Client::new(format!("http://{addr}")))
}

async fn run(cli: Cli) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Command::Serve(args) = cli.command {
        return serve(args).await;
    }
    let client = connect(cli.server.or_else(|| config.server.clone())).await?;
    match cli.command {
        Command::Subspace(a) => subspace(&client, a, &config).await,
        Command::Debias(a) => debias(&client, a, &config).await,
        Command::EvalMac(a) => eval_mac(&client, a, &config).await,
        Command::EvalEq(a) => eval_eq(&client, a).await,
        Command::ValidateHypothesis(a) => validate_hypothesis(&client, a, &config).await,
        Command::Report(a) => report(&client, a, &config).await,
        Command::Serve(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .without_time()
        .with_target(false)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.kind.exit_code() as u8)
        }
    }
}
