mod config;
mod evaluate;
mod explain;
mod oracle;
mod output;
mod pipeline;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use predex::{Document, Error};

use config::{Config, ConfigError, Level};
use evaluate::{Metric, Request, Source};
use pipeline::{Runtime, Technique};

#[derive(Parser)]
#[command(name = "predex", version, about = "Predicate-space explanations for black-box classifiers")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-instance work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Serve every backend call from fixtures; never touch the network.
    #[arg(long, global = true)]
    offline: bool,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain one instance.
    Explain {
        #[arg(long, value_enum)]
        technique: Technique,
        #[arg(long, value_enum)]
        level: Option<Level>,
        /// Instance id (the first configured instance when omitted).
        #[arg(long)]
        instance: Option<String>,
    },
    /// Score explanations with the fidelity metrics.
    Evaluate {
        #[arg(long, value_enum, conflicts_with = "explanation", required_unless_present = "explanation")]
        technique: Option<Technique>,
        /// A saved explanation document to score instead of a fresh run.
        #[arg(long)]
        explanation: Option<PathBuf>,
        #[arg(long, value_enum)]
        level: Option<Level>,
        #[arg(long, value_enum, value_delimiter = ',')]
        metrics: Option<Vec<Metric>>,
        /// Samples per estimate.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Compare explainers and estimators against brute-force oracles.
    OracleCheck {
        #[arg(long, value_enum, default_value = "all")]
        suite: oracle::Suite,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let path = cli.config.as_ref().ok_or_else(|| ConfigError("--config is required".into()))?;
    let mut cfg = Config::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match &cli.command {
        Command::OracleCheck { suite } => oracle::run(*suite, cli.seed.unwrap_or(0)),
        Command::Explain { technique, level, instance } => {
            let cfg = load_config(&cli)?;
            let level = level.unwrap_or(cfg.predicates.level);
            let rt = Runtime::new(cfg, cli.offline)?;
            explain::run(&rt, *technique, level, instance.as_deref(), cli.out.as_deref())
        }
        Command::Evaluate { technique, explanation, level, metrics, n } => {
            let cfg = load_config(&cli)?;
            let (source, doc_level) = match (technique, explanation) {
                (Some(t), _) => (Source::Technique(*t), None),
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    let doc = Document::from_json(&text)?;
                    let l = evaluate::document_level(&doc);
                    (Source::Document(Box::new(doc)), Some(l))
                }
                (None, None) => return Err(ConfigError("evaluate needs --technique or --explanation".into()).into()),
            };
            let level = level.or(doc_level).unwrap_or(cfg.predicates.level);
            let rt = Runtime::new(cfg, cli.offline)?;
            let req = Request { source, level, metrics: metrics.clone(), n: *n, jobs: cli.jobs, out: cli.out.as_deref() };
            evaluate::run(&rt, req)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::InvalidInput(_) | Error::Template(_) | Error::Parse { .. } | Error::DimensionMismatch { .. } => 2,
                Error::Retryable(_)
                | Error::Protocol(_)
                | Error::Unparseable { .. }
                | Error::Extraction { .. }
                | Error::Realization(_)
                | Error::Io(_) => 3,
                Error::UnsupportedMetric(_) => 5,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = run(cli);
    log::info!("network calls: {}", predex_adapters::network_calls());
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
