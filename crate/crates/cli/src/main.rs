use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use poincare_core::layers::BnMode;
use poincare_core::models::InitScheme;
use poincare_core::training::{
    evaluate, load_checkpoint, load_cifar10, synthetic_data, train, TrainConfig, SYNTHETIC_TEST,
};
use poincare_core::verify::{
    bn_bench, gradcheck_all, norm_sweep, norm_sweep_csv, tape_ratio, tape_rows_csv,
    tape_size_bench, BenchOptions, GradcheckOptions, NormSweepOptions, TapeSizeOptions,
};

#[derive(Parser)]
#[command(
    name = "poincare-resnet",
    version,
    about = "Poincare ResNet training and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Cap on training images.
        #[arg(long)]
        subset: Option<usize>,
        #[arg(long)]
        bn: Option<BnMode>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CIFAR-10 directory, or `synthetic:SIDE` for the two-class task.
        #[arg(long)]
        data: String,
        #[arg(long, default_value = "midpoint")]
        bn: BnMode,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Cap on test images; for synthetic data, the size of the test split (match the run's `test_subset`).
        #[arg(long)]
        subset: Option<usize>,
        /// Seed that generated the synthetic data.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Reproducibility checks; each writes CSV.
    Verify {
        #[command(subcommand)]
        check: VerifyCommand,
    },
}

#[derive(Args)]
struct Output {
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Finite-difference check of every backward rule.
    Gradcheck {
        #[command(flatten)]
        io: Output,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 1e-4)]
        layer_tol: f64,
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Mean output norms of stacked FC layers under both initializations.
    Norms {
        #[command(flatten)]
        io: Output,
        #[arg(long, default_value_t = 10)]
        depth: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
    },
    /// Midpoint versus Frechet timing.
    BnBench {
        #[command(flatten)]
        io: Output,
        #[arg(long, value_delimiter = ',', default_value = "32,128")]
        batch_sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "4,16")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
    /// Node and saved-byte counts of fused versus naive tapes.
    TapeBench {
        #[command(flatten)]
        io: Output,
    },
}

fn emit(out: Option<&Path>, csv: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(csv.as_bytes())?;
            Ok(())
        }
    }
}

fn run_train(
    config: &Path,
    subset: Option<usize>,
    bn: Option<BnMode>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = TrainConfig::from_file(config)?;
    if let Some(n) = subset {
        cfg.train_subset = Some(n);
    }
    if let Some(bn) = bn {
        cfg.bn_mode = bn;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let outcome = train(&cfg)?;
    eprintln!("model notes: {}", outcome.model.notes.join("; "));
    eprintln!("loss: cross-entropy over MLR scores as logits");
    for m in &outcome.history {
        eprintln!("{}", m.csv_row());
    }
    eprintln!(
        "metrics: {}\ncheckpoint: {}",
        outcome.csv_path.display(),
        outcome.checkpoint_path.display()
    );
    Ok(())
}

fn run_eval(
    checkpoint: &Path,
    data: &str,
    bn: BnMode,
    batch: usize,
    subset: Option<usize>,
    seed: u64,
) -> Result<()> {
    if batch < 2 {
        bail!("--batch-size must be at least 2 for batch statistics");
    }
    let ck = load_checkpoint(checkpoint)?;
    let test = match data.strip_prefix("synthetic") {
        Some(side) => {
            let side = side.trim_start_matches(':');
            let side = if side.is_empty() {
                8
            } else {
                side.parse().context("synthetic side")?
            };
            synthetic_data(seed, 0, subset.unwrap_or(SYNTHETIC_TEST), side).1
        }
        None => load_cifar10(Path::new(data), Some(0), subset)?.test,
    };
    let acc = evaluate(&ck.model, &test, batch, bn)?;
    println!(
        "epoch {} | {} images | test accuracy {:.4}",
        ck.epoch,
        test.len(),
        acc
    );
    Ok(())
}

fn run_verify(check: VerifyCommand) -> Result<bool> {
    match check {
        VerifyCommand::Gradcheck {
            io,
            tol,
            layer_tol,
            points,
        } => {
            let report = gradcheck_all(&GradcheckOptions {
                seed: io.seed,
                points,
                tol_primitive: tol,
                tol_layer: layer_tol,
                ..GradcheckOptions::default()
            })?;
            emit(io.out.as_deref(), &report.to_csv())?;
            for f in report.failures() {
                eprintln!("FAIL {} at c = {}: {:e}", f.op, f.c, f.max_rel_error);
            }
            Ok(report.all_passed())
        }
        VerifyCommand::Norms { io, depth, dim } => {
            let opts = NormSweepOptions {
                depth,
                dim,
                seed: io.seed,
                ..NormSweepOptions::default()
            };
            let mut rows = norm_sweep(InitScheme::Identity, &opts)?;
            rows.extend(norm_sweep(InitScheme::Normal, &opts)?);
            emit(io.out.as_deref(), &norm_sweep_csv(&rows))?;
            Ok(true)
        }
        VerifyCommand::BnBench {
            io,
            batch_sizes,
            dims,
            repeats,
        } => {
            let report = bn_bench(&BenchOptions {
                batch_sizes,
                dims,
                repeats,
                seed: io.seed,
                ..BenchOptions::default()
            })?;
            emit(io.out.as_deref(), &report.to_csv())?;
            Ok(true)
        }
        VerifyCommand::TapeBench { io } => {
            let rows = tape_size_bench(&TapeSizeOptions {
                seed: io.seed,
                ..TapeSizeOptions::default()
            })?;
            emit(io.out.as_deref(), &tape_rows_csv(&rows))?;
            if let Some((n, b)) = tape_ratio(&rows, "residual_block") {
                eprintln!("residual block fused/naive: nodes {n:.3}, saved bytes {b:.3}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            subset,
            bn,
            seed,
        } => run_train(&config, subset, bn, seed).map(|_| true),
        Command::Eval {
            checkpoint,
            data,
            bn,
            batch_size,
            subset,
            seed,
        } => run_eval(&checkpoint, &data, bn, batch_size, subset, seed).map(|_| true),
        Command::Verify { check } => run_verify(check),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
