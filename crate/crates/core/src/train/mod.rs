//! Training loop, checkpointing on validation improvement, augmentation and
//! regression metrics.

mod augment;
mod config;
mod dataset;

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment_image, augment_set, build_augmented_dataset, ElasticField, Transform};
pub use config::{AugmentMode, AugmentParams, DataConfig, RunConfig, TrainingConfig};
pub use dataset::{
    batches, epoch_permutation, read_labels, unit_hash, write_labels, Dataset, LabelRecord, LabelScaler,
    Normalizer, Prepared, Sample,
};

use crate::error::{Error, Result};
use crate::model::{checkpoint, Model, ModelConfig};
use crate::nn::{mse_loss, AdamConfig, AdamState, Mode};
use crate::projection::{pjsn::ChannelRange, ChannelId, ChannelSelection};

/// Independent random streams, so turning augmentation on does not change the
/// dropout masks or the batch order. Weight init uses the model's own seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Dropout = 1,
    Augment = 2,
    Shuffle = 3,
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}

pub const CHECKPOINT_FILE: &str = "best.psck";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss in squared years.
    pub train_loss: f64,
    /// Validation mean squared error in squared years.
    pub val_loss: f64,
    pub checkpoint: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub checkpoint_epochs: Vec<usize>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Keeps the epochs at which validation loss reached a new strict minimum.
#[derive(Clone, Debug)]
pub struct CheckpointTracker {
    best: f64,
    epochs: Vec<usize>,
}

impl Default for CheckpointTracker {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            epochs: Vec::new(),
        }
    }
}

impl CheckpointTracker {
    /// Returns whether this epoch should be checkpointed.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.epochs.push(epoch);
            true
        } else {
            false
        }
    }

    pub fn epochs(&self) -> &[usize] {
        &self.epochs
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.epochs.last().copied()
    }
}

/// Everything needed to turn raw projections into predictions, stored in
/// the checkpoint header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub channels: Vec<String>,
    pub normalization: Vec<ChannelRange>,
    pub labels: LabelScaler,
    pub epoch: usize,
    pub val_loss: f64,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Weights of the best validation epoch (the last ones if none improved).
    pub best: Model<f32>,
    pub meta: CheckpointMeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

pub fn regression_metrics(pred: &[f32], target: &[f32]) -> Result<Metrics> {
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (&p, &t) in pred.iter().zip(target) {
        let e = p as f64 - t as f64;
        abs += e.abs();
        sq += e * e;
    }
    Ok(Metrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        n: pred.len(),
    })
}

const EVAL_BATCH: usize = 64;

/// Eval-mode predictions in years.
pub fn predict_ages(model: &Model<f32>, prep: &Prepared, labels: &LabelScaler) -> Result<Vec<f32>> {
    let order: Vec<usize> = (0..prep.len()).collect();
    let mut out = Vec::with_capacity(prep.len());
    for idx in order.chunks(EVAL_BATCH) {
        let (b, _) = prep.batch(idx)?;
        out.extend(model.predict(&b)?.data().iter().map(|&z| labels.decode(z)));
    }
    Ok(out)
}

fn mse_years(model: &Model<f32>, prep: &Prepared, labels: &LabelScaler) -> Result<f64> {
    let pred = predict_ages(model, prep, labels)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(&prep.targets)
        .map(|(&p, &z)| (p as f64 - labels.decode(z) as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// Trains with the full validation set evaluated after every epoch.
pub fn train(
    model: Model<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainingConfig,
    augment: &AugmentParams,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let norm = Normalizer::fit(train)?;
    let labels = LabelScaler::fit(&train.ages())?;
    let val_prep = Prepared::new(val, &norm, &labels)?;
    train_with_validator(model, train, val, cfg, augment, out_dir, |_, m| {
        mse_years(m, &val_prep, &labels)
    })
}

/// As [`train`], with the validation loss supplied by `validator(epoch, model)`.
pub fn train_with_validator(
    mut model: Model<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainingConfig,
    augment: &AugmentParams,
    out_dir: Option<&Path>,
    mut validator: impl FnMut(usize, &Model<f32>) -> Result<f64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_ids: HashSet<&str> = train.samples().iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = val.samples().iter().find(|s| train_ids.contains(s.id.as_str())) {
        return Err(Error::Parameter(format!(
            "subject `{}` is in both the training and validation sets",
            s.id
        )));
    }
    if cfg.augment {
        augment.validate()?;
    }
    let norm = Normalizer::fit(train)?;
    let labels = LabelScaler::fit(&train.ages())?;
    let mut meta = CheckpointMeta {
        channels: train.channel_ids().iter().map(ToString::to_string).collect(),
        normalization: norm.channels.clone(),
        labels,
        epoch: 0,
        val_loss: f64::INFINITY,
    };

    let augmented = |epoch: u64| -> Result<Prepared> {
        let mut rng = stream_rng(cfg.seed, Stream::Augment, epoch);
        let ds = build_augmented_dataset(train, augment, cfg.augment_copies, &mut rng)?;
        Prepared::new(&ds, &norm, &labels)
    };
    let mut prep = match (cfg.augment, cfg.augment_mode) {
        (true, AugmentMode::Precomputed) => augmented(0)?,
        _ => Prepared::new(train, &norm, &labels)?,
    };

    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join(LOG_FILE);
            Some((BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?), p))
        }
        None => None,
    };

    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &model.params_mut());
    let mut dropout_rng = stream_rng(cfg.seed, Stream::Dropout, 0);
    let mut tracker = CheckpointTracker::default();
    let mut best = model.clone();
    let mut report = TrainReport::default();
    let sigma2 = labels.std * labels.std;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.augment && cfg.augment_mode == AugmentMode::OnTheFly {
            prep = augmented(epoch as u64)?;
        }
        let order = epoch_permutation(prep.len(), cfg.seed, epoch);
        let (mut sum, mut count) = (0.0, 0usize);
        for (bi, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let (batch, y) = prep.batch(idx)?;
            model.zero_grad();
            let (pred, tape) = model.forward(&batch, Mode::Train, &mut dropout_rng)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    lr: cfg.lr,
                    loss,
                });
            }
            model.backward(&tape, &grad)?;
            adam.step(&mut model.params_mut()).map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::Divergence {
                    epoch,
                    batch: bi + 1,
                    lr: cfg.lr,
                    loss,
                },
                e => e,
            })?;
            sum += loss * idx.len() as f64;
            count += idx.len();
        }
        let train_loss = sum / count as f64 * sigma2;
        let val_loss = validator(epoch, &model)?;
        let improved = tracker.observe(epoch, val_loss);
        if improved {
            best = model.clone();
            meta.epoch = epoch;
            meta.val_loss = val_loss;
            if let Some(dir) = out_dir {
                checkpoint::save(&best, serde_json::to_value(&meta)?, &dir.join(CHECKPOINT_FILE))?;
            }
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            checkpoint: improved,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some((w, p)) = log.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(p.clone(), e))?;
        }
        report.epochs.push(rec);
        if let (Some(patience), Some(best_epoch)) = (cfg.patience, tracker.best_epoch()) {
            if epoch - best_epoch >= patience && epoch < cfg.epochs {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.checkpoint_epochs = tracker.epochs().to_vec();
    report.best_epoch = tracker.best_epoch();
    report.best_val_loss = tracker.best();
    if tracker.best_epoch().is_none() {
        best = model;
    }
    if let Some(dir) = out_dir {
        let p = dir.join(SUMMARY_FILE);
        fs::write(&p, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(TrainOutcome { report, best, meta })
}

/// A trained model together with its input and label scaling.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub model: Model<f32>,
    pub meta: CheckpointMeta,
}

impl Predictor {
    pub fn load(path: &Path) -> Result<Self> {
        let (model, meta) = checkpoint::load(path)?;
        Ok(Self {
            model,
            meta: serde_json::from_value(meta)?,
        })
    }

    pub fn channels(&self) -> Result<Vec<ChannelId>> {
        self.meta.channels.iter().map(|c| c.parse()).collect()
    }

    /// Predicted ages for every subject, in dataset order.
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<f32>> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let ds = ds.select(&self.channels()?)?;
        let norm = Normalizer {
            channels: self.meta.normalization.clone(),
        };
        let prep = Prepared::new(&ds, &norm, &self.meta.labels)?;
        predict_ages(&self.model, &prep, &self.meta.labels)
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<Metrics> {
        regression_metrics(&self.predict(ds)?, &ds.ages())
    }
}

/// Result of a configured end-to-end run.
pub struct RunOutcome {
    pub train: TrainOutcome,
    pub split_sizes: [usize; 3],
    pub test: Option<Metrics>,
    pub checkpoint: Option<PathBuf>,
}

/// Selects channels, splits, builds the model, trains and scores the best
/// weights on the test split.
pub fn run(cfg: &RunConfig, ds: &Dataset, out_dir: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let selection = ChannelSelection::parse(&cfg.data.channels)?;
    let ds = ds.select(selection.channels())?;
    let (tr, va, te) = ds.split(cfg.data.split);
    let model_cfg = ModelConfig {
        channels_per_plane: ds.channels_per_plane(),
        ..cfg.model.clone()
    };
    let model = Model::new(model_cfg, ds.input_dims())?;
    let outcome = train(model, &tr, &va, &cfg.train, &cfg.augment, out_dir)?;
    let test = if te.is_empty() {
        None
    } else {
        let p = Predictor {
            model: outcome.best.clone(),
            meta: outcome.meta.clone(),
        };
        Some(p.evaluate(&te)?)
    };
    Ok(RunOutcome {
        train: outcome,
        split_sizes: [tr.len(), va.len(), te.len()],
        test,
        checkpoint: out_dir.map(|d| d.join(CHECKPOINT_FILE)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_rule() {
        let mut t = CheckpointTracker::default();
        let hits: Vec<usize> = [10.0, 9.0, 11.0, 8.0]
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| t.observe(i + 1, v).then_some(i + 1))
            .collect();
        assert_eq!(hits, [1, 2, 4]);
        assert_eq!(t.best_epoch(), Some(4));
        let mut t = CheckpointTracker::default();
        assert!(t.observe(1, 5.0));
        assert!(!t.observe(2, 5.0));
    }

    #[test]
    fn metrics_arithmetic() {
        let m = regression_metrics(&[50.0, 60.0], &[52.0, 57.0]).unwrap();
        assert!((m.mae - 2.5).abs() < 1e-12);
        assert!((m.rmse - 6.5f64.sqrt()).abs() < 1e-12);
        let z = regression_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((z.mae, z.rmse), (0.0, 0.0));
        assert!(matches!(regression_metrics(&[], &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn streams_are_distinct() {
        use rand::RngCore;
        let a = stream_rng(7, Stream::Dropout, 0).next_u64();
        let b = stream_rng(7, Stream::Augment, 0).next_u64();
        let c = stream_rng(7, Stream::Shuffle, 0).next_u64();
        assert!(a != b && b != c && a != c);
        assert_eq!(a, stream_rng(7, Stream::Dropout, 0).next_u64());
    }
}
