mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed input data (exit 1).
    Data(String),
    /// Bad flags or configuration (exit 2).
    Usage(String),
    /// A required external asset or runtime is missing (exit 3).
    External(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 1,
            CliError::Usage(_) => 2,
            CliError::External(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Data(m) | CliError::Usage(m) | CliError::External(m) => f.write_str(m),
        }
    }
}

impl From<slicegru::Error> for CliError {
    fn from(e: slicegru::Error) -> Self {
        use slicegru::Error as E;
        match e {
            E::InvalidArgument(_) => CliError::Usage(e.to_string()),
            E::ExternalUnavailable(_) => CliError::External(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "slicegru", version, about = "Slice-sequence classification of volumetric scans")]
struct Cli {
    /// JSON run configuration; omitted fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set head.hidden1=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check that every manifest entry loads with its declared shape.
    Ingest,
    /// Compute and cache per-slice features.
    Extract,
    /// Train one head on one fold.
    Train {
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// k-fold cross-validation.
    Cv,
    /// Validation F1 over a hyper-parameter grid.
    Sweep {
        #[arg(long, value_enum)]
        grid: Grid,
    },
    /// Variant models and baselines.
    Ablate {
        #[arg(long, value_enum)]
        which: Ablation,
    },
    /// Attention heatmaps and embedding exports.
    Explain {
        #[arg(long)]
        volume: Option<String>,
        /// Comma-separated 1-based slice indices.
        #[arg(long, value_delimiter = ',')]
        slices: Option<Vec<usize>>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a synthetic dataset to `data_dir`.
    Synth,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grid {
    GruSizes,
    Dropout,
    Focal,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Lstm,
    Resnet,
    Svm,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let mut cfg = config::resolve(cli.config.as_deref(), &cli.sets)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Extract => commands::extract(&cfg),
        Command::Train { fold } => commands::train(&cfg, fold),
        Command::Cv => commands::cv(&cfg, "cv"),
        Command::Sweep { grid } => commands::sweep(&cfg, grid),
        Command::Ablate { which } => commands::ablate(&cfg, which),
        Command::Explain {
            volume,
            slices,
            checkpoint,
        } => {
            if volume.is_some() {
                cfg.explain.volume_id = volume;
            }
            if let Some(s) = slices {
                cfg.explain.slices = s;
            }
            if checkpoint.is_some() {
                cfg.explain.checkpoint = checkpoint;
            }
            commands::explain(&cfg)
        }
        Command::Synth => commands::synth(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
