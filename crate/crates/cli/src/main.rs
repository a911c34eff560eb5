//! Command-line interface for the fine-tuning laboratory.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wpft_cli::artifacts::{load_model, rebuild_model};
use wpft_cli::compare::compare;
use wpft_cli::config::ExperimentConfig;
use wpft_cli::eval::{evaluate_model, METRICS_HEADER};
use wpft_cli::train::{finetune, pretrain};
use wpft_core::error::{Error, Result};
use wpft_core::tasks::{generate, load_dataset, save_dataset, Regime, Split, TaskId};

#[derive(Parser)]
#[command(name = "wpft", about = "Desk-scale fine-tuning experiments on gridded fields")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the source and target datasets for a task.
    Gen {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Samples per regime.
        #[arg(long, default_value_t = 64)]
        n: usize,
    },
    /// Fully train the backbone on the source regime.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fine-tune one method on the target regime.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split and print the metric rows.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory (one regime).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run several configs and merge their metrics into one table.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
    },
    /// Print the per-step selection statistics of a masked run.
    MaskStats {
        #[arg(long)]
        run: PathBuf,
    },
}

fn run(cmd: Cmd, w: &mut dyn Write) -> Result<()> {
    match cmd {
        Cmd::Gen { task, seed, out, n } => {
            let task = TaskId::parse(&task)?;
            for regime in [Regime::Source, Regime::Target] {
                let data = generate(task, seed, n, regime)?;
                let dir = out.join(regime.id());
                save_dataset(&data, &dir)?;
                writeln!(w, "wrote {} ({} samples)", dir.display(), n)?;
            }
            Ok(())
        }
        Cmd::Pretrain { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let (path, report) = pretrain(&cfg)?;
            writeln!(
                w,
                "pretrained {} (loss {} -> {})",
                path.display(),
                report.initial_loss,
                report.final_loss
            )?;
            Ok(())
        }
        Cmd::Train { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let run = finetune(&cfg)?;
            writeln!(
                w,
                "trained {} (loss {} -> {}, freeze audit {})",
                run.checkpoint.display(),
                run.report.initial_loss,
                run.report.final_loss,
                if run.report.freeze_audit_pass { "pass" } else { "fail" }
            )?;
            writeln!(w, "metrics at {}", run.metrics_path.display())?;
            Ok(())
        }
        Cmd::Eval { ckpt, data, split } => {
            let split = Split::parse(&split)?;
            let (store, meta) = load_model(&ckpt)?;
            let (model, _) = rebuild_model(&store, &meta)?;
            let dataset = load_dataset(&data)?;
            if dataset.task != meta.task {
                return Err(Error::config(format!(
                    "checkpoint was trained on {} but the dataset is {}",
                    meta.task.id(),
                    dataset.task.id()
                )));
            }
            let rows = evaluate_model(&model, &store, &dataset, split, meta.method, meta.seed)?;
            writeln!(w, "{}", METRICS_HEADER.join(","))?;
            for r in rows {
                writeln!(
                w,
                    "{},{},{},{},{},{},{}",
                    r.method, r.task, r.variable, r.metric, r.value, r.n_samples, r.seed
                )?;
            }
            Ok(())
        }
        Cmd::Compare { configs, out } => {
            let outcome = compare(&configs, &out)?;
            writeln!(
                w,
                "compared {} runs ({} failed); table at {}",
                outcome.succeeded + outcome.failed,
                outcome.failed,
                outcome.table_path.display()
            )?;
            Ok(())
        }
        Cmd::MaskStats { run } => {
            let path = run.join("mask_stats.csv");
            let text = std::fs::read_to_string(&path)?;
            write!(w, "{text}")?;
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Shape { .. } => 2,
        Error::Io(_) | Error::Format { .. } => 3,
        Error::Numeric(_) | Error::Undefined(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(cli.cmd, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed pipe (e.g. piping into `head`) is not a failure.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
