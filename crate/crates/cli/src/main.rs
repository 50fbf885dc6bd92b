use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use dataqual::corpus::{load_dataset_inferred, write_dataset, Dataset};
use dataqual::dqi::DqiConfig;
use dataqual::embeddings::{read_emb, write_emb};
use dataqual::evalharness::{evaluate, render_table, EvalReport, FeatureSet, TableFormat, BANNER};
use dataqual::linmodels::TrainConfig;
use dataqual::pruner::{prune, PruneConfig};
use dataqual::synthetic::{planted, PlantedConfig};
use dataqual_service::Store;

#[derive(Parser, Debug)]
#[command(
    name = "dataqual",
    version,
    about = "Dataset pruning, quality scoring and probe evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Prune a dataset down to its hard, high-quality core.
    Prune(PruneArgs),
    /// Train linear probes on one or more training sets and print a results table.
    Eval(EvalArgs),
    /// Run the sample-creation service.
    Serve(ServeArgs),
    /// Write the planted-bias synthetic dataset and its embeddings.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// EMB1 file; its manifest is read from `<path>.manifest.json`.
    #[arg(long)]
    embeddings: PathBuf,
    /// JSON prune config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    no_coarse: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Training set as `name=path` or `path`; repeat for more rows.
    #[arg(long, required = true)]
    train: Vec<String>,
    #[arg(long)]
    dev: PathBuf,
    /// Out-of-distribution set as `name=path`; `group/name` groups columns.
    #[arg(long)]
    ood: Vec<String>,
    /// EMB1 files covering every sample of every set.
    #[arg(long, required = true, num_args = 1..)]
    embeddings: Vec<PathBuf>,
    /// JSON probe training config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    format: TableFormat,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    state: PathBuf,
    /// Seeds an empty state directory; ignored once the log exists.
    #[arg(long)]
    seed_dataset: Option<PathBuf>,
    /// JSON DQI config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    size: usize,
    #[arg(long, default_value_t = 200)]
    planted: usize,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn data_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(config_err)
}

fn load(path: &Path) -> Result<Dataset, Failure> {
    load_dataset_inferred(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(data_err)
}

fn run_prune(args: PruneArgs) -> Result<(), Failure> {
    let mut cfg: PruneConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => PruneConfig::default(),
    };
    if args.no_coarse {
        cfg.coarse_enabled = false;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(config_err)?;

    let d = load(&args.dataset)?;
    let (emb, manifest) = read_emb(&args.embeddings)
        .with_context(|| format!("reading {}", args.embeddings.display()))
        .map_err(data_err)?;
    let result = prune(&d, &emb, &manifest, &cfg).map_err(|e| {
        if e.is_config_error() {
            config_err(e)
        } else {
            data_err(e)
        }
    })?;

    write_dataset(&result.kept, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(data_err)?;
    if let Some(path) = &args.trace {
        std::fs::write(path, result.trace.to_jsonl())
            .with_context(|| format!("writing {}", path.display()))
            .map_err(data_err)?;
    }
    eprintln!(
        "kept {} of {} samples ({} burned) after {} iterations; stop: {:?}",
        result.kept.len(),
        d.len(),
        manifest.burned.len(),
        result.trace.iterations.len(),
        result.trace.stop
    );
    Ok(())
}

fn named(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) => (name.to_owned(), PathBuf::from(path)),
        None => {
            let path = PathBuf::from(spec);
            let name = path
                .file_stem()
                .map_or_else(|| spec.to_owned(), |s| s.to_string_lossy().into_owned());
            (name, path)
        }
    }
}

fn run_eval(args: EvalArgs) -> Result<(), Failure> {
    let probe: TrainConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    probe.validate().map_err(config_err)?;
    let mut ood = Vec::new();
    for spec in &args.ood {
        let (name, path) = spec
            .split_once('=')
            .map(|(n, p)| (n.to_owned(), PathBuf::from(p)))
            .ok_or_else(|| config_err(anyhow!("--ood expects name=path, got {spec:?}")))?;
        ood.push((name, load(&path)?));
    }
    let dev = load(&args.dev)?;
    let mats = args
        .embeddings
        .iter()
        .map(|p| {
            read_emb(p)
                .map(|(m, _)| m)
                .with_context(|| format!("reading {}", p.display()))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(data_err)?;
    let features = FeatureSet::new(mats).map_err(data_err)?;

    let mut report = EvalReport::new(ood.iter().map(|(n, _)| n.clone()).collect());
    for spec in &args.train {
        let (name, path) = named(spec);
        let train = load(&path)?;
        let row = evaluate(&name, &train, &dev, &ood, &features, &probe).map_err(data_err)?;
        report.push(row).map_err(data_err)?;
    }
    if args.format != TableFormat::Json {
        log::info!("{BANNER}");
    }
    print!("{}", render_table(&report, args.format));
    Ok(())
}

fn run_serve(args: ServeArgs) -> Result<(), Failure> {
    let cfg: DqiConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => DqiConfig::bundled_default(),
    };
    cfg.validate().map_err(config_err)?;
    let seed = args.seed_dataset.as_deref().map(load).transpose()?;
    let store = Store::open(&args.state, seed, cfg)
        .with_context(|| format!("opening state directory {}", args.state.display()))
        .map_err(data_err)?;
    let app = dataqual_service::router(Arc::new(store));
    let addr = SocketAddr::new(args.host, args.port);

    let rt = tokio::runtime::Runtime::new().map_err(data_err)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok::<_, anyhow::Error>(())
    })
    .map_err(data_err)
}

fn run_synth(args: SynthArgs) -> Result<(), Failure> {
    let cfg = PlantedConfig {
        size: args.size,
        planted: args.planted,
        seed: args.seed,
        ..PlantedConfig::default()
    };
    if cfg.planted >= cfg.size {
        return Err(config_err(anyhow!("--planted must be below --size")));
    }
    let f = planted(&cfg);
    std::fs::create_dir_all(&args.out_dir).map_err(data_err)?;
    let dir = &args.out_dir;
    write_dataset(&f.dataset, dir.join("planted.jsonl")).map_err(data_err)?;
    write_emb(&f.embeddings, &f.manifest, dir.join("planted.emb")).map_err(data_err)?;
    std::fs::write(dir.join("planted-ids.txt"), f.planted_ids.join("\n") + "\n").map_err(data_err)?;
    eprintln!(
        "wrote {} samples ({} planted, {} burned) to {}",
        f.dataset.len(),
        f.planted_ids.len(),
        f.manifest.burned.len(),
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prune(a) => run_prune(a),
        Command::Eval(a) => run_eval(a),
        Command::Serve(a) => run_serve(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(e) | Failure::Data(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
