//! `digrad`: train a small text classifier, build neighbor indexes, and
//! compare path-based attribution methods on it.

mod commands;
mod config;
mod error;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CommonArgs, RunConfig, Sweep};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "digrad",
    version,
    about = "Path-based attribution for a built-in text classifier",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Minibatch size
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    /// Hidden layer width
    #[arg(long)]
    hidden: Option<usize>,
    /// Embedding dimension (ignored when --embeddings is given)
    #[arg(long = "embed-dim")]
    embed_dim: Option<usize>,
    /// Minimum token count for the vocabulary
    #[arg(long = "min-count")]
    min_count: Option<usize>,
    /// Held-out fraction for validation accuracy
    #[arg(long = "val-fraction")]
    val_fraction: Option<f64>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.embed_dim {
            cfg.embed_dim = v;
        }
        if let Some(v) = self.min_count {
            cfg.min_count = v;
        }
        if let Some(v) = self.val_fraction {
            cfg.val_fraction = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the built-in classifier; writes a checkpoint and a training log
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Precompute the K-nearest-neighbor index over an embedding table
    Index {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Attribute every sentence with every configured method (JSONL)
    Attribute {
        #[command(flatten)]
        common: CommonArgs,
        /// Also dump every interpolation path as JSONL
        #[arg(long = "dump-paths")]
        dump_paths: bool,
    },
    /// Compute log-odds, comprehensiveness, and sufficiency (CSV + JSONL)
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate across a parameter sweep, one CSV per value
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sweep spec: one of m=…, f=…, K=…, k=… with comma-separated values
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Render a report file into static HTML pages
    Render {
        #[command(flatten)]
        common: CommonArgs,
        /// reports.jsonl produced by `digrad attribute`
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, flags } => {
            let cfg = RunConfig::resolve_with("train", &common, |cfg| {
                flags.apply(cfg);
                Ok(())
            })?;
            commands::cmd_train(&cfg)
        }
        Command::Index { common } => {
            let cfg = RunConfig::resolve("index", &common)?;
            commands::cmd_index(&cfg)
        }
        Command::Attribute { common, dump_paths } => {
            let cfg = RunConfig::resolve_with("attribute", &common, |cfg| {
                cfg.dump_paths |= dump_paths;
                Ok(())
            })?;
            commands::cmd_attribute(&cfg)
        }
        Command::Evaluate { common } => {
            let cfg = RunConfig::resolve("evaluate", &common)?;
            commands::cmd_evaluate(&cfg)
        }
        Command::Sweep { common, sweep } => {
            let cfg = RunConfig::resolve_with("sweep", &common, |cfg| {
                if let Some(spec) = &sweep {
                    cfg.sweep = Some(Sweep::parse(spec)?);
                }
                Ok(())
            })?;
            commands::cmd_sweep(&cfg)
        }
        Command::Render { common, report } => {
            let cfg = RunConfig::resolve_with("render", &common, |cfg| {
                if let Some(path) = report {
                    cfg.report = Some(path);
                }
                Ok(())
            })?;
            commands::cmd_render(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code())
        }
    }
}
