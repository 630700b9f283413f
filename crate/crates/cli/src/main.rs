use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qrelu_core::{ActivationKind, Error};
use qrelu_lab::*;

#[derive(Parser)]
#[command(name = "qrelu-lab", version, about = "Train and compare CNN activation functions")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (initialisation, shuffling, dropout, bootstrap).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config leaf, e.g. `--set train.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output location (directory, file or prefix, per command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the first configured activation; writes a checkpoint and history.
    Train,
    /// Evaluate a checkpoint on the configured test data.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate every configured activation; writes CSV/JSON reports.
    Benchmark {
        /// Run activations concurrently (timings become non-comparable).
        #[arg(long)]
        parallel: bool,
    },
    /// Finite-difference checks of activation and network gradients.
    Gradcheck {
        /// Kinds to check; all eleven when omitted.
        #[arg(long = "activation")]
        activations: Vec<ActivationKind>,
    },
    /// Convert a class-per-directory image tree into an IDX pair.
    Ingest { src: PathBuf },
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::Train => {
            let out = cli.out.unwrap_or_else(|| "runs/train".into());
            let outcome = cmd_train(&config, &out)?;
            println!(
                "trained {} for {} epochs, final loss {:.5}; checkpoint {}",
                config.activations[0],
                outcome.history.epoch_loss.len(),
                outcome.history.epoch_loss.last().copied().unwrap_or(f64::NAN),
                outcome.checkpoint.display()
            );
        }
        Command::Evaluate { checkpoint } => {
            let report = cmd_evaluate(&config, &checkpoint)?;
            let json = serde_json::to_string_pretty(&report).expect("serialisable report");
            match cli.out {
                Some(path) => std::fs::write(&path, json + "\n").map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?,
                None => println!("{json}"),
            }
            eprintln!("{}", report.display_row());
        }
        Command::Benchmark { parallel } => {
            let mut config = config;
            if let Some(out) = cli.out {
                config.report.output_path = out;
            }
            let reports = cmd_benchmark(&config, parallel)?;
            for r in &reports {
                println!("{}", r.display_row());
            }
            for (_, path) in report_paths(&config) {
                println!("wrote {}", path.display());
            }
        }
        Command::Gradcheck { activations } => {
            let kinds = if activations.is_empty() {
                ActivationKind::ALL.to_vec()
            } else {
                activations
            };
            let summary = cmd_gradcheck(&kinds, &config.model.activation_params, config.seed)?;
            for (s, n) in summary.scalar.iter().zip(&summary.network) {
                println!(
                    "{:<10} scalar {} (max rel err {:.2e})  network {} (max rel err {:.2e})",
                    s.subject,
                    if s.pass { "pass" } else { "FAIL" },
                    s.max_rel_err,
                    if n.pass { "pass" } else { "FAIL" },
                    n.max_rel_err
                );
            }
            if let Some(path) = cli.out {
                let json = serde_json::to_string_pretty(&summary).expect("serialisable summary");
                std::fs::write(&path, json + "\n").map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
            }
            if !summary.pass() {
                return Err(Error::Numeric("gradient check failed".into()));
            }
        }
        Command::Ingest { src } => {
            let out = cli.out.unwrap_or_else(|| "data/ingested".into());
            let (images, labels) = cmd_ingest(&src, &config.data.ingest, &out)?;
            println!("wrote {} and {}", images.display(), labels.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("QRELU_LAB_THREADS") {
        std::env::set_var("MATMUL_NUM_THREADS", threads);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
