mod commands;
mod config;
mod error;

use std::io::IsTerminal;
use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sig_backend::mock::DEFAULT_MOCK_MODEL_ID;
use sig_backend::MockConfig;
use tracing_subscriber::EnvFilter;

use crate::config::Config;
use crate::error::CliError;

/// Synthetic identity generation and verification analysis.
#[derive(Debug, Parser)]
#[command(name = "sig", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for planning and pair sampling.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan identities and write plan.jsonl.
    Plan(Common),
    /// Generate every planned image through the backend.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        concurrency: Option<usize>,
        /// Print the job count without contacting the backend.
        #[arg(long)]
        dry_run: bool,
        /// Falls back to the config, then SIG_BACKEND_URL.
        #[arg(long)]
        backend_url: Option<String>,
    },
    /// Check every manifest record against the image on disk.
    Verify(Common),
    /// Embed generated images into embeddings.emb1.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        backend_url: Option<String>,
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Score pairs and write the report bundle.
    Analyze(Common),
    /// Print per-cell name counts of the pool.
    PoolStats {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pool CSV (overrides the config).
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Run the deterministic mock backend until interrupted.
    MockServe {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        #[arg(long)]
        latency_ms: Option<u64>,
        #[arg(long, default_value = DEFAULT_MOCK_MODEL_ID)]
        model_id: String,
    },
    /// Run the wire-protocol checks against a backend.
    Conformance {
        #[arg(long)]
        backend_url: Option<String>,
        /// Also check /v1/embed.
        #[arg(long)]
        embed: bool,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn resolve(common: &Common) -> Result<Config, CliError> {
    let mut config = load_config(common.config.as_ref())?;
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        config.dataset.master_seed = seed;
        config.analysis.pairs.seed = seed;
    }
    Ok(config)
}

async fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Plan(common) => commands::cmd_plan(&resolve(&common)?).map(drop),
        Command::Generate {
            common,
            concurrency,
            dry_run,
            backend_url,
        } => {
            let mut config = resolve(&common)?;
            if let Some(c) = concurrency {
                config.concurrency = c;
            }
            commands::cmd_generate(&config, backend_url.as_deref(), dry_run).await.map(drop)
        }
        Command::Verify(common) => commands::cmd_verify(&resolve(&common)?),
        Command::Embed {
            common,
            backend_url,
            concurrency,
        } => {
            let mut config = resolve(&common)?;
            if let Some(c) = concurrency {
                config.embedding.concurrency = c;
            }
            commands::cmd_embed(&config, backend_url.as_deref()).await.map(drop)
        }
        Command::Analyze(common) => commands::cmd_analyze(&resolve(&common)?).map(drop),
        Command::PoolStats { config, pool } => {
            let mut config = load_config(config.as_ref())?;
            if pool.is_some() {
                config.pool = pool;
            }
            print!("{}", commands::cmd_pool_stats(&config)?);
            Ok(())
        }
        Command::MockServe {
            config,
            port,
            host,
            latency_ms,
            model_id,
        } => {
            let config = load_config(config.as_ref())?;
            commands::cmd_mock_serve(MockConfig {
                host,
                port,
                model_id,
                latency_ms,
                oracle: config.embedding.oracle,
            })
            .await
        }
        Command::Conformance { backend_url, embed } => {
            let url = Config::default().backend_url(backend_url.as_deref());
            commands::cmd_conformance(&url, embed).await
        }
    }
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli).await {
        eprintln!("{}", e.to_json_line());
        std::process::exit(e.exit_code());
    }
}
