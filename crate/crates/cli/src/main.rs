use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod fixture;
mod manifest;

use commands::Ctx;
use config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("refused: {0}")]
    Refusal(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Refusal(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hitlist6", version, about = "Build, filter, probe and evaluate IPv6 hitlists")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, default_value = "hitlist6.toml")]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for simulation and fixture generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the filter stage.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read every configured source and write the merged target set.
    Ingest,
    /// Run the filter cascade over the ingested targets.
    Filter,
    /// Probe filtered targets at every configured interval.
    Probe {
        /// Required for the raw socket backend.
        #[arg(long = "i-am-authorized")]
        authorized: bool,
    },
    /// Compute the report bundle from upstream artifacts.
    Analyze,
    /// Print a source plan for a scan type.
    Recommend {
        /// internet_structure, security_posture, routers, clients or active_prefixes
        scan_type: String,
    },
    /// Write a synthetic input corpus and matching config.
    FixtureGen {
        #[arg(long)]
        dir: PathBuf,
        /// Scale factor for the number of hosts.
        #[arg(long, default_value_t = 1)]
        scale: u32,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    if let Command::FixtureGen { dir, scale } = &cli.command {
        return fixture::generate(dir, seed.unwrap_or(42), *scale)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())));
    }
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let cfg = PipelineConfig::load(&cli.config)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: set output_dir or pass --out".into()))?;
    let ctx = Ctx {
        config_path: cli.config.clone(),
        seed: seed.or(cfg.seed).unwrap_or(0),
        cfg,
        out,
        threads: cli.threads,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Filter => commands::filter(&ctx),
        Command::Probe { authorized } => commands::probe(&ctx, authorized),
        Command::Analyze => commands::analyze(&ctx),
        Command::Recommend { scan_type } => commands::recommend_cmd(&ctx, &scan_type),
        Command::FixtureGen { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hitlist6: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
