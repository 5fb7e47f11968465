use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "meshgnn", version, about = "Graph-network surrogates for mesh and surface-chain geometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic dataset splits from a TOML config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; one `<split>.jsonl` per split.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints plus a per-epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split label for the report; defaults to the data file stem.
        #[arg(long)]
        split: Option<String>,
        /// Per-graph CSV path; defaults to `eval_<split>.csv` next to the checkpoint.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Predict for one graph and write CSV.
    Predict(PredictArgs),
    /// Summarize a dataset or checkpoint file.
    Inspect { path: PathBuf },
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Training dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for `model.ckpt`, `train_log.jsonl` and interval checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.seed` (weight init and shuffling).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file holding the graph.
    #[arg(long, conflicts_with = "selig", required_unless_present = "selig")]
    pub data: Option<PathBuf>,
    /// Record id within `--data`; required when the file holds several records.
    #[arg(long, requires = "data")]
    pub id: Option<String>,
    /// Selig airfoil coordinate file.
    #[arg(long, requires = "freestream")]
    pub selig: Option<PathBuf>,
    /// Freestream `u0,v0` for `--selig`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub freestream: Option<Vec<f64>>,
    /// Close the Selig chain at the trailing edge.
    #[arg(long, requires = "selig")]
    pub closed: bool,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out } => commands::gen(&config, &out),
        Command::Train(args) => commands::train(&args),
        Command::Eval { checkpoint, data, split, csv } => commands::eval(&checkpoint, &data, split, csv),
        Command::Predict(args) => commands::predict(&args),
        Command::Inspect { path } => commands::inspect(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (class, code) = commands::classify(&err);
            eprintln!("meshgnn: {class}: {}", format!("{err:#}").replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
