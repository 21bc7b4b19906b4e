use clap::{Args, Parser, Subcommand};
use sfu_cli::{
    cmd_eval, cmd_partition, cmd_recover, cmd_report, cmd_train, cmd_unlearn, CliError, CliResult,
    RunConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Federated learning simulator with client unlearning.
#[derive(Parser)]
#[command(name = "sfu", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Zero out wall-time fields for byte-reproducible outputs.
    #[arg(long)]
    no_timing: bool,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.no_timing {
            cfg.record_timing = false;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the client partition for the configured scheme.
    Partition {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the federated model with the poisoned target client.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a previous run directory, keeping round numbering.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the config's round count.
        #[arg(long)]
        rounds: Option<usize>,
        /// Record per-round client deltas for the `ul` method.
        #[arg(long)]
        keep_history: Option<bool>,
    },
    /// Remove the target client's contribution from a checkpoint.
    Unlearn {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's method (sfu|ga|ul|retrain).
        #[arg(long)]
        method: Option<String>,
        /// History file for `ul`; defaults to history.bin next to the
        /// checkpoint.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run recovery rounds without the target client.
    Recover {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's recovery round count.
        #[arg(long)]
        rounds: Option<usize>,
        /// Pre-unlearning checkpoint for loss-delta reporting.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (clean accuracy, attack rate, loss delta).
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional output directory for the metrics files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reference checkpoint for the loss delta.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Collate run directories into a Markdown summary table.
    Report {
        /// Directory holding one or more run directories.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Partition { common, out } => cmd_partition(&common.load()?, &out),
        Command::Train {
            common,
            out,
            resume,
            rounds,
            keep_history,
        } => {
            let mut cfg = common.load()?;
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            if let Some(k) = keep_history {
                cfg.keep_history = k;
            }
            cmd_train(&cfg, &out, resume.as_deref())
        }
        Command::Unlearn {
            common,
            checkpoint,
            out,
            method,
            history,
        } => {
            let mut cfg = common.load()?;
            if let Some(m) = method {
                cfg.method = m;
                cfg.validate()?;
            }
            cmd_unlearn(&cfg, &checkpoint, history.as_deref(), &out)
        }
        Command::Recover {
            common,
            checkpoint,
            out,
            rounds,
            reference,
        } => {
            let cfg = common.load()?;
            let rounds = rounds.unwrap_or(cfg.recovery_rounds);
            cmd_recover(&cfg, &checkpoint, rounds, reference.as_deref(), &out)
        }
        Command::Eval {
            common,
            checkpoint,
            out,
            reference,
        } => {
            let cfg = common.load()?;
            let row = cmd_eval(&cfg, &checkpoint, reference.as_deref(), out.as_deref())?;
            println!(
                "clean_acc {:.4}  atk_acc {:.4}  loss_delta {:+.6}",
                row.clean_acc, row.atk_acc, row.loss_delta
            );
            Ok(())
        }
        Command::Report { out } => {
            let table = cmd_report(&out)?;
            print!("{table}");
            let path = out.join("summary.md");
            std::fs::write(&path, &table).map_err(|e| CliError::Data(e.to_string()))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
