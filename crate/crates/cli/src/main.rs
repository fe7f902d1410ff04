//! Command-line driver: generate demonstrations, train predictors, run
//! full-grid evaluations, and roll out single episodes.

mod config;
mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mimic_core::policy::PolicyMode;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "mimic",
    version,
    about = "Grid-world visual imitation: predict outcomes, act by pixel error"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the demonstration dataset for the configured task plus
    /// all four action primitives.
    DemoGen {
        /// Run config JSON; falls back to the RUN_CONFIG env var.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured predictors on a generated dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (as written by demo-gen).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for model artifacts and training logs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep every start cell and write a per-start report.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory with trained model artifacts.
        #[arg(long)]
        models: PathBuf,
        /// Report CSV path.
        #[arg(long)]
        report: PathBuf,
        /// Override the configured policy mode.
        #[arg(long, value_enum)]
        mode: Option<CliMode>,
        /// Worker threads for the sweep (default: logical processors).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run one episode and write a frame strip plus per-step errors.
    Rollout {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        models: PathBuf,
        /// Start cell as X,Y (e.g. 12,0).
        #[arg(long)]
        start: String,
        /// Strip image output path (binary PPM).
        #[arg(long)]
        strip: PathBuf,
        /// Per-step error CSV (default: strip path with .csv extension).
        #[arg(long)]
        errors_csv: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<CliMode>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliMode {
    SingleImage,
    SequenceFed,
}

impl From<CliMode> for PolicyMode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::SingleImage => PolicyMode::SingleImage,
            CliMode::SequenceFed => PolicyMode::SequenceFed,
        }
    }
}

/// Exit codes are fixed for CI scripting: 0 ok, 2 config or usage, 3 I/O,
/// 4 training divergence, 5 model-load failure.
pub enum CliError {
    Config(anyhow::Error),
    Io(anyhow::Error),
    Training(anyhow::Error),
    ModelLoad(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Training(_) => 4,
            CliError::ModelLoad(_) => 5,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            CliError::Config(e)
            | CliError::Io(e)
            | CliError::Training(e)
            | CliError::ModelLoad(e) => e,
        }
    }
}

fn load_config(path: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let path = path
        .or_else(|| std::env::var_os("RUN_CONFIG").map(PathBuf::from))
        .ok_or_else(|| {
            CliError::Config(anyhow::anyhow!(
                "no config: pass --config or set RUN_CONFIG"
            ))
        })?;
    RunConfig::load(&path).map_err(CliError::Config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Clap exits 0 for --help/--version and 2 for usage errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::DemoGen { config, out } => {
            load_config(config).and_then(|cfg| ops::demo_gen(&cfg, &out))
        }
        Command::Train { config, data, out } => {
            load_config(config).and_then(|cfg| ops::train(&cfg, &data, &out))
        }
        Command::Eval {
            config,
            models,
            report,
            mode,
            jobs,
        } => load_config(config)
            .and_then(|cfg| ops::eval(&cfg, &models, &report, mode.map(PolicyMode::from), jobs)),
        Command::Rollout {
            config,
            models,
            start,
            strip,
            errors_csv,
            mode,
        } => load_config(config).and_then(|cfg| {
            ops::rollout(
                &cfg,
                &models,
                &start,
                &strip,
                errors_csv.as_deref(),
                mode.map(PolicyMode::from),
            )
        }),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
