mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use rhanet_core::Error;

/// Crack segmentation: train, evaluate, predict, benchmark and inspect models.
#[derive(Parser, Debug)]
#[command(name = "rhanet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug, Default)]
struct Shared {
    /// `key = value` settings file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory that split-list paths are relative to.
    #[arg(long, global = true)]
    data_root: Option<String>,
    /// baseline | baseline-rb | baseline-hab | rha | rha-lite
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Base channel width W.
    #[arg(long, global = true)]
    width: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Probability threshold for crack pixels.
    #[arg(long, global = true)]
    threshold: Option<String>,
    /// Matching tolerance in pixels.
    #[arg(long, global = true)]
    tolerance: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints, history.csv and report.json.
    Train {
        #[arg(long)]
        train_list: Option<String>,
        #[arg(long)]
        val_list: Option<String>,
        #[arg(long)]
        epochs: Option<String>,
        #[arg(long)]
        batch: Option<String>,
        #[arg(long)]
        lr: Option<String>,
        /// Positive weight for crack pixels, or `auto`.
        #[arg(long)]
        omega_p: Option<String>,
        #[arg(long)]
        checkpoint_interval: Option<String>,
        /// true | false
        #[arg(long)]
        augment: Option<String>,
    },
    /// Score a checkpoint (or a directory of predicted masks) on a split.
    Eval {
        /// Split list to evaluate.
        #[arg(long = "list")]
        eval_list: Option<String>,
        #[arg(long, conflicts_with = "pred_dir")]
        checkpoint: Option<PathBuf>,
        /// Directory of predicted masks named `<image stem>.png`.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        /// Also write color overlays under `<out>/overlays`.
        #[arg(long)]
        overlays: bool,
    },
    /// Segment one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Ground-truth mask; enables the overlay output.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Time forward passes.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        /// Input shape as HxW, CxHxW or NxCxHxW.
        #[arg(long, default_value = "3x480x640")]
        shape: String,
    },
    /// Parameter and FLOP counts of all variants at one width.
    Inspect {
        #[arg(long, default_value = "3x480x640")]
        shape: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            Error::UnknownVariant(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn settings(shared: &Shared, command: &Command) -> Result<RunConfig, CliError> {
    let base = match &shared.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut flags = RunConfig::default();
    let mut put = |key: &str, v: &Option<String>| v.as_deref().map_or(Ok(()), |v| flags.set(key, v));
    put("data_root", &shared.data_root)?;
    put("variant", &shared.variant)?;
    put("width", &shared.width)?;
    put("seed", &shared.seed)?;
    put("threshold", &shared.threshold)?;
    put("tolerance", &shared.tolerance)?;
    put("out", &shared.out)?;
    match command {
        Command::Train {
            train_list,
            val_list,
            epochs,
            batch,
            lr,
            omega_p,
            checkpoint_interval,
            augment,
        } => {
            put("train_list", train_list)?;
            put("val_list", val_list)?;
            put("epochs", epochs)?;
            put("batch", batch)?;
            put("lr", lr)?;
            put("omega_p", omega_p)?;
            put("checkpoint_interval", checkpoint_interval)?;
            put("augment", augment)?;
        }
        Command::Eval { eval_list, .. } => put("eval_list", eval_list)?,
        _ => {}
    }
    Ok(base.merge(flags))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = settings(&cli.shared, &cli.command)?;
    match cli.command {
        Command::Train { .. } => commands::train(&cfg),
        Command::Eval {
            checkpoint,
            pred_dir,
            overlays,
            ..
        } => commands::eval(&cfg, checkpoint.as_deref(), pred_dir.as_deref(), overlays),
        Command::Predict { checkpoint, image, gt } => commands::predict(&cfg, &checkpoint, &image, gt.as_deref()),
        Command::Bench {
            checkpoint,
            iters,
            shape,
        } => commands::bench(&checkpoint, iters, &shape),
        Command::Inspect { shape } => commands::inspect(&cfg, &shape),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rhanet: {e}");
            ExitCode::from(e.code())
        }
    }
}
