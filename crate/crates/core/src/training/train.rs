use std::fs::{self, File};
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{BnConfig, BnMode};
use crate::models::{build_model, pixel_embed, ModelParams};
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::{DataSource, TrainConfig};
use super::data::{load_cifar10, synthetic_splits, Dataset};
use super::loss::accuracy;
use super::optim::{optimizer_step, OptimizerState};

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,test_acc,wall_seconds,bn_mode";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
    pub bn_mode: BnMode,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{:.4},{:.3},{}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.test_acc,
            self.wall_seconds,
            self.bn_mode.as_str()
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    pub model: ModelParams,
    pub csv_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

/// Loads the configured train and test splits.
pub fn load_data(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Cifar10(dir) => {
            let d = load_cifar10(dir, cfg.train_subset, cfg.test_subset)?;
            Ok((d.train, d.test))
        }
        DataSource::Synthetic { side } => Ok(synthetic_data(
            cfg.seed,
            cfg.train_subset.unwrap_or(SYNTHETIC_TRAIN),
            cfg.test_subset.unwrap_or(SYNTHETIC_TEST),
            *side,
        )),
    }
}

pub const SYNTHETIC_TRAIN: usize = 512;
pub const SYNTHETIC_TEST: usize = 256;

/// The two-class task for a run seed; its generator is separate from the
/// one driving initialization and shuffling.
pub fn synthetic_data(seed: u64, train: usize, test: usize, side: usize) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_DA7A);
    synthetic_splits(&mut rng, train, test, side)
}

fn bn_config(mode: BnMode) -> BnConfig {
    BnConfig {
        mode,
        ..BnConfig::default()
    }
}

/// Consecutive index ranges of at most `batch` items; a trailing singleton
/// joins the previous range because batch statistics need two samples.
fn eval_ranges(len: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    let batch = batch.max(2);
    let mut out: Vec<_> = (0..len)
        .step_by(batch)
        .map(|s| s..(s + batch).min(len))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Test accuracy, normalizing with the statistics of each evaluation batch.
pub fn evaluate(
    model: &ModelParams,
    data: &Dataset,
    batch_size: usize,
    mode: BnMode,
) -> Result<f64> {
    let cfg = bn_config(mode);
    let mut hits = 0.0;
    for range in eval_ranges(data.len(), batch_size) {
        let idx: Vec<usize> = range.collect();
        let (x, labels) = data.batch::<ChaCha8Rng>(&idx, None);
        let scores = model.forward(&x, &cfg)?;
        hits += accuracy(&scores, &labels) * idx.len() as f64;
    }
    Ok(hits / data.len().max(1) as f64)
}

/// One optimizer step on a batch; returns the loss and batch accuracy.
pub fn train_step(
    model: &mut ModelParams,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    images: &Tensor,
    labels: &[usize],
) -> Result<(f64, f64)> {
    let c = model.arch.curvature();
    let mut tape = Tape::new();
    tape.set_debug_checks(crate::debug_checks_enabled());
    let x = tape.constant(pixel_embed(images, c)?.into_coords());
    let f = model.forward_taped(&mut tape, x, &bn_config(cfg.bn_mode), true)?;
    let loss_id = tape.cross_entropy(f.scores, labels)?;
    let loss = tape.value(loss_id).item()?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    let acc = accuracy(tape.value(f.scores), labels);
    let grads = tape.backward(loss_id)?;
    let params = model.params();
    let g: Vec<Tensor> = f
        .params
        .iter()
        .zip(&params)
        .map(|(id, p)| {
            grads
                .get(*id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();
    drop(params);
    optimizer_step(&mut model.params_mut(), &g, opt, cfg.lr, cfg.weight_decay)?;
    model.record_bn_stats(&f.bn_reports);
    Ok((loss, acc))
}

/// Trains per `cfg`, writing `metrics.csv` and `checkpoint.prn` to the
/// output directory after every epoch.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (train_set, test_set) = load_data(cfg)?;
    train_on(cfg, &train_set, &test_set)
}

pub fn train_on(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.num_classes != cfg.arch.num_classes {
        return Err(Error::Config(format!(
            "data has {} classes, model has {}",
            train_set.num_classes, cfg.arch.num_classes
        )));
    }
    if train_set.len() < 2 || test_set.is_empty() {
        return Err(Error::Config(
            "need at least two training and one test image".into(),
        ));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join("metrics.csv");
    let checkpoint_path = cfg.out_dir.join("checkpoint.prn");
    let mut csv = File::create(&csv_path)?;
    writeln!(csv, "{CSV_HEADER}")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(&cfg.arch, &mut rng)?;
    let mut opt = OptimizerState::new(cfg.optimizer, &model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut last_good: Option<PathBuf> = None;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut acc_sum, mut seen) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, labels) = if cfg.augment {
                train_set.batch(chunk, Some(&mut rng))
            } else {
                train_set.batch::<ChaCha8Rng>(chunk, None)
            };
            let (loss, acc) = match train_step(&mut model, &mut opt, cfg, &x, &labels) {
                Err(Error::NonFinite(what)) => {
                    let reference = last_good
                        .as_ref()
                        .map_or("none yet".to_string(), |p| p.display().to_string());
                    return Err(Error::NonFinite(format!(
                        "{what} in epoch {epoch}; last good checkpoint: {reference}"
                    )));
                }
                other => other?,
            };
            loss_sum += loss * chunk.len() as f64;
            acc_sum += acc * chunk.len() as f64;
            seen += chunk.len();
        }
        let test_acc = evaluate(&model, test_set, cfg.batch_size, cfg.bn_mode)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: acc_sum / seen as f64,
            test_acc,
            wall_seconds: start.elapsed().as_secs_f64(),
            bn_mode: cfg.bn_mode,
        };
        writeln!(csv, "{}", m.csv_row())?;
        csv.flush()?;
        history.push(m);
        let ck = Checkpoint {
            model: model.clone(),
            optimizer: opt.clone(),
            epoch: epoch as u64,
            rng: rng.clone(),
        };
        save_checkpoint(&ck, &checkpoint_path)?;
        last_good = Some(checkpoint_path.clone());
    }
    Ok(TrainOutcome {
        history,
        model,
        csv_path,
        checkpoint_path,
    })
}

/// Drops the timing column so runs can be compared byte for byte.
pub fn strip_wall_time(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let mut cols: Vec<&str> = line.split(',').collect();
            if cols.len() > 4 {
                cols.remove(4);
            }
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
