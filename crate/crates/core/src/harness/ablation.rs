//! Channel-subset sweep: one training per (subset, learning rate), results
//! appended to a CSV as they finish so an interrupted sweep can resume.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::projection::ChannelId;
use crate::train::{self, AugmentParams, Dataset, TrainingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub lrs: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Architecture template; channel counts come from each subset.
    pub model: ModelConfig,
    pub split: [f64; 3],
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            lrs: vec![0.003, 0.001],
            epochs: 30,
            batch_size: 64,
            seed: 0,
            model: ModelConfig::default(),
            split: [0.7, 0.15, 0.15],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    /// Bit `i` set when channel `i` of the sweep's channel list is used.
    pub subset_bitmask: u32,
    pub lr: f64,
    /// Lowest validation loss reached, i.e. that of the kept checkpoint.
    pub val_loss: f64,
    pub seed: u64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub config_hash: String,
    pub channels: Vec<String>,
    pub config: AblationConfig,
}

pub const RESULTS_FILE: &str = "ablation.csv";
pub const MANIFEST_FILE: &str = "ablation_manifest.json";

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    /// All records on disk, ordered by subset then learning rate.
    pub results: Vec<AblationResult>,
    /// Trainings run by this call.
    pub trained: usize,
    pub results_path: PathBuf,
}

/// Per-cell seed; independent of which cells run, in what order or where.
pub fn cell_seed(global: u64, subset: u32, lr: f64) -> u64 {
    super::derive_seed(&[global, subset as u64, lr.to_bits()])
}

pub fn subset_channels(channels: &[ChannelId], mask: u32) -> Vec<ChannelId> {
    channels
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, c)| *c)
        .collect()
}

fn config_hash(cfg: &AblationConfig, ds: &Dataset) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    for s in ds.samples() {
        h.update(s.id.as_bytes());
        h.update(s.age.to_le_bytes());
        for c in s.set.channels() {
            h.update(c.id.to_string().as_bytes());
            for v in c.image.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn read_results(path: &Path) -> Result<Vec<AblationResult>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Trains one cell and returns its record.
pub fn run_cell(
    ds: &Dataset,
    channels: &[ChannelId],
    mask: u32,
    lr: f64,
    cfg: &AblationConfig,
) -> Result<AblationResult> {
    let seed = cell_seed(cfg.seed, mask, lr);
    let sub = ds.select(&subset_channels(channels, mask))?;
    let (tr, va, _) = sub.split(cfg.split);
    let model_cfg = ModelConfig {
        channels_per_plane: sub.channels_per_plane(),
        iso: false,
        seed,
        ..cfg.model.clone()
    };
    let model = Model::new(model_cfg, sub.input_dims())?;
    let tcfg = TrainingConfig {
        lr,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        augment: false,
        seed,
        ..TrainingConfig::default()
    };
    let out = train::train(model, &tr, &va, &tcfg, &AugmentParams::default(), None)?;
    Ok(AblationResult {
        subset_bitmask: mask,
        lr,
        val_loss: out.report.best_val_loss,
        seed,
        epochs: cfg.epochs,
    })
}

/// Runs every (subset, lr) cell not yet recorded in `out_dir`, at most
/// `max_cells` of them when given.
pub fn ablation_sweep(
    ds: &Dataset,
    cfg: &AblationConfig,
    out_dir: &Path,
    max_cells: Option<usize>,
) -> Result<SweepOutcome> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.lrs.is_empty() {
        return Err(Error::Config("ablation needs at least one learning rate".into()));
    }
    let channels = ds.channel_ids();
    if channels.is_empty() || channels.len() > 16 {
        return Err(Error::Config(format!("{} channels cannot be swept", channels.len())));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = SweepManifest {
        config_hash: config_hash(cfg, ds)?,
        channels: channels.iter().map(ToString::to_string).collect(),
        config: cfg.clone(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let results_path = out_dir.join(RESULTS_FILE);
    if manifest_path.exists() {
        let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let old: SweepManifest = serde_json::from_slice(&text)?;
        if old.config_hash != manifest.config_hash {
            return Err(Error::Config(format!(
                "{} belongs to a different sweep configuration or dataset",
                out_dir.display()
            )));
        }
    } else {
        if results_path.exists() {
            return Err(Error::Config(format!(
                "{} exists without a manifest",
                results_path.display()
            )));
        }
        fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)
            .map_err(|e| Error::io(&manifest_path, e))?;
    }

    let done: BTreeMap<(u32, u64), AblationResult> = read_results(&results_path)?
        .into_iter()
        .map(|r| ((r.subset_bitmask, r.lr.to_bits()), r))
        .collect();
    let mut pending: Vec<(u32, f64)> = Vec::new();
    for mask in 0..1u32 << channels.len() {
        for &lr in &cfg.lrs {
            if !done.contains_key(&(mask, lr.to_bits())) {
                pending.push((mask, lr));
            }
        }
    }
    if let Some(m) = max_cells {
        pending.truncate(m);
    }

    let fresh = !results_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&results_path)
        .map_err(|e| Error::io(&results_path, e))?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        writer.write_record(["subset_bitmask", "lr", "val_loss", "seed", "epochs"])?;
        writer.flush().map_err(|e| Error::io(&results_path, e))?;
    }
    let writer = Mutex::new(writer);
    let new: Vec<AblationResult> = pending
        .par_iter()
        .map(|&(mask, lr)| {
            let rec = run_cell(ds, &channels, mask, lr, cfg)?;
            let mut w = writer.lock().expect("writer lock");
            w.serialize(&rec)?;
            w.flush().map_err(|e| Error::io(&results_path, e))?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let trained = new.len();
    let mut all: BTreeMap<(u32, u64), AblationResult> = done;
    for r in new {
        all.insert((r.subset_bitmask, r.lr.to_bits()), r);
    }
    let lr_rank = |lr: f64| cfg.lrs.iter().position(|&x| x.to_bits() == lr.to_bits()).unwrap_or(usize::MAX);
    let mut results: Vec<AblationResult> = all.into_values().collect();
    results.sort_by_key(|r| (r.subset_bitmask, lr_rank(r.lr)));
    Ok(SweepOutcome {
        results,
        trained,
        results_path,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMarginal {
    pub channel: String,
    /// Mean of `loss(S) - loss(S + channel)` over subsets lacking it.
    pub mean_decrease: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub channels: Vec<ChannelMarginal>,
    pub lrs: Vec<f64>,
}

/// Average loss decrease from adding each channel. Every subset must be
/// present for every learning rate seen in `results`.
pub fn marginal_contribution(results: &[AblationResult], channels: &[String]) -> Result<MarginalReport> {
    let n = channels.len();
    if n == 0 || n > 16 {
        return Err(Error::Config(format!("{n} channels cannot be analysed")));
    }
    let mut lrs: Vec<f64> = Vec::new();
    for r in results {
        if !lrs.iter().any(|x| x.to_bits() == r.lr.to_bits()) {
            lrs.push(r.lr);
        }
    }
    if lrs.is_empty() {
        return Err(Error::IncompleteSweep(vec!["no records".into()]));
    }
    let table: BTreeMap<(u32, u64), f64> = results
        .iter()
        .map(|r| ((r.subset_bitmask, r.lr.to_bits()), r.val_loss))
        .collect();
    let mut missing = Vec::new();
    for mask in 0..1u32 << n {
        for &lr in &lrs {
            if !table.contains_key(&(mask, lr.to_bits())) {
                missing.push(format!("subset {mask:#0w$b} lr {lr}", w = n + 2));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteSweep(missing));
    }
    let channels = channels
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let bit = 1u32 << c;
            let (mut sum, mut pairs) = (0.0, 0usize);
            for mask in (0..1u32 << n).filter(|m| m & bit == 0) {
                for &lr in &lrs {
                    sum += table[&(mask, lr.to_bits())] - table[&(mask | bit, lr.to_bits())];
                    pairs += 1;
                }
            }
            ChannelMarginal {
                channel: name.clone(),
                mean_decrease: sum / pairs as f64,
                pairs,
            }
        })
        .collect();
    Ok(MarginalReport { channels, lrs })
}

pub fn write_report_json(report: &MarginalReport, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, report)?;
    writeln!(f).map_err(|e| Error::io(path, e))
}
