use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{stream_rng, Stream};
use crate::error::{Error, Result};
use crate::model::Batch;
use crate::nn::Tensor;
use crate::projection::{pjsn, ChannelId, Plane, ProjectionSet};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub age: f32,
    pub set: ProjectionSet,
}

/// Labelled subjects sharing one channel layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let layout = layout_of(&first.set);
            for s in &samples[1..] {
                if layout_of(&s.set) != layout {
                    return Err(Error::Shape(format!(
                        "subject `{}` has a different channel layout than `{}`",
                        s.id, first.id
                    )));
                }
            }
        }
        if let Some(s) = samples.iter().find(|s| !s.age.is_finite()) {
            return Err(Error::Parameter(format!("subject `{}` has a non-finite age", s.id)));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ages(&self) -> Vec<f32> {
        self.samples.iter().map(|s| s.age).collect()
    }

    pub fn channel_ids(&self) -> Vec<ChannelId> {
        self.samples.first().map(|s| s.set.ids()).unwrap_or_default()
    }

    /// Input channels per plane in coronal, axial, sagittal order.
    pub fn channels_per_plane(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for id in self.channel_ids() {
            c[id.plane.index()] += 1;
        }
        c
    }

    /// Image size per plane, `(0, 0)` for planes without channels.
    pub fn input_dims(&self) -> [(usize, usize); 3] {
        let mut d = [(0, 0); 3];
        if let Some(s) = self.samples.first() {
            for ch in s.set.channels() {
                d[ch.id.plane.index()] = ch.image.dims();
            }
        }
        d
    }

    /// Keeps only the given channels of every subject.
    pub fn select(&self, keep: &[ChannelId]) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id.clone(),
                    age: s.age,
                    set: s.set.select(keep)?,
                })
            })
            .collect::<Result<_>>()?;
        Dataset::new(samples)
    }

    /// Deterministic train/validation/test partition by a hash of the
    /// subject id, so a subject keeps its side whatever else is in the set.
    pub fn split(&self, fractions: [f64; 3]) -> (Dataset, Dataset, Dataset) {
        let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
        for s in &self.samples {
            let u = unit_hash(&s.id);
            if u < fractions[0] {
                a.push(s.clone());
            } else if u < fractions[0] + fractions[1] {
                b.push(s.clone());
            } else {
                c.push(s.clone());
            }
        }
        (Dataset { samples: a }, Dataset { samples: b }, Dataset { samples: c })
    }

    /// Reads every `.pjsn` file of `dir` (sorted by name) and labels them
    /// from a `subject_id,age` CSV. Files without a label are an error.
    pub fn load_dir(dir: &Path, labels: &Path) -> Result<Self> {
        let ages = read_labels(labels)?;
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pjsn"))
            .collect();
        paths.sort();
        let mut samples = Vec::with_capacity(paths.len());
        for p in paths {
            let set = pjsn::read(&p)?;
            let age = *ages.get(&set.subject_id).ok_or_else(|| {
                Error::Format(format!("no label for subject `{}` in {}", set.subject_id, labels.display()))
            })?;
            samples.push(Sample {
                id: set.subject_id.clone(),
                age,
                set,
            });
        }
        Dataset::new(samples)
    }
}

fn layout_of(set: &ProjectionSet) -> Vec<(ChannelId, (usize, usize))> {
    set.channels().iter().map(|c| (c.id, c.image.dims())).collect()
}

/// Maps a subject id to `[0, 1)` through SHA-256.
pub fn unit_hash(id: &str) -> f64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRecord {
    pub subject_id: String,
    pub age: f32,
}

pub fn read_labels(path: &Path) -> Result<HashMap<String, f32>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for rec in rdr.deserialize() {
        let r: LabelRecord = rec?;
        if out.insert(r.subject_id.clone(), r.age).is_some() {
            return Err(Error::Format(format!("duplicate label for `{}`", r.subject_id)));
        }
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[(String, f32)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, age) in labels {
        w.serialize(LabelRecord {
            subject_id: id.clone(),
            age: *age,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-channel min-max scaling to `[0, 1]`, fitted on training subjects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub channels: Vec<pjsn::ChannelRange>,
}

impl Normalizer {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let first = ds.samples.first().ok_or(Error::EmptyDataset)?;
        let mut ranges: Vec<(f32, f32)> = first.set.ranges();
        for s in &ds.samples[1..] {
            for (r, (lo, hi)) in ranges.iter_mut().zip(s.set.ranges()) {
                r.0 = r.0.min(lo);
                r.1 = r.1.max(hi);
            }
        }
        Ok(Self {
            channels: first
                .set
                .ids()
                .into_iter()
                .zip(ranges)
                .map(|(id, (min, max))| pjsn::ChannelRange {
                    channel: id.to_string(),
                    min,
                    max,
                })
                .collect(),
        })
    }

    fn scale(&self, k: usize) -> (f32, f32) {
        let r = &self.channels[k];
        let span = r.max - r.min;
        (r.min, if span > 0.0 { 1.0 / span } else { 1.0 })
    }
}

/// Standardisation of ages; the network regresses `(age - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub mean: f64,
    pub std: f64,
}

impl LabelScaler {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn fit(ages: &[f32]) -> Result<Self> {
        if ages.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = ages.len() as f64;
        let mean = ages.iter().map(|&a| a as f64).sum::<f64>() / n;
        let var = ages.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Ok(Self {
            mean,
            std: if std > 1e-6 { std } else { 1.0 },
        })
    }

    pub fn encode(&self, age: f32) -> f32 {
        ((age as f64 - self.mean) / self.std) as f32
    }

    pub fn decode(&self, z: f32) -> f32 {
        (z as f64 * self.std + self.mean) as f32
    }
}

/// Normalised network inputs of a dataset, ready for fast batch assembly.
#[derive(Clone, Debug)]
pub struct Prepared {
    channels: [usize; 3],
    dims: [(usize, usize); 3],
    /// Per plane: samples x channels x h x w, contiguous per sample.
    planes: [Vec<f32>; 3],
    pub targets: Vec<f32>,
}

impl Prepared {
    pub fn new(ds: &Dataset, norm: &Normalizer, labels: &LabelScaler) -> Result<Self> {
        let ids = ds.channel_ids();
        if ids.len() != norm.channels.len()
            || ids.iter().zip(&norm.channels).any(|(id, r)| id.to_string() != r.channel)
        {
            return Err(Error::Shape("dataset channels do not match the normaliser".into()));
        }
        let mut planes: [Vec<f32>; 3] = Default::default();
        for s in &ds.samples {
            for (k, ch) in s.set.channels().iter().enumerate() {
                let (lo, inv) = norm.scale(k);
                planes[ch.id.plane.index()].extend(ch.image.data().iter().map(|&v| (v - lo) * inv));
            }
        }
        Ok(Self {
            channels: ds.channels_per_plane(),
            dims: ds.input_dims(),
            planes,
            targets: ds.samples.iter().map(|s| labels.encode(s.age)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn per_sample(&self, p: usize) -> usize {
        self.channels[p] * self.dims[p].0 * self.dims[p].1
    }

    /// Gathers the given samples into a model batch and its target column.
    pub fn batch(&self, idx: &[usize]) -> Result<(Batch<f32>, Tensor<f32>)> {
        let mut planes: [Option<Tensor<f32>>; 3] = [None, None, None];
        for plane in Plane::ALL {
            let p = plane.index();
            if self.channels[p] == 0 {
                continue;
            }
            let per = self.per_sample(p);
            let mut data = Vec::with_capacity(idx.len() * per);
            for &i in idx {
                data.extend_from_slice(&self.planes[p][i * per..(i + 1) * per]);
            }
            let (h, w) = self.dims[p];
            planes[p] = Some(Tensor::from_vec(&[idx.len(), self.channels[p], h, w], data)?);
        }
        let y = Tensor::from_vec(&[idx.len(), 1], idx.iter().map(|&i| self.targets[i]).collect())?;
        Ok((Batch::new(idx.len(), planes), y))
    }
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch as u64));
    idx
}

/// Splits an ordering into batches of at most `size`, folding a trailing
/// single sample into the previous batch so batch norm always sees two.
pub fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size.max(1)).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{Channel, Image2D, Statistic};

    pub(crate) fn toy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let chans = [Plane::Coronal, Plane::Axial]
                    .into_iter()
                    .map(|p| Channel {
                        id: ChannelId::new(p, Statistic::Mean),
                        image: Image2D::new(2, 3, (0..6).map(|k| (i * 6 + k) as f32).collect()).unwrap(),
                    })
                    .collect();
                Sample {
                    id: format!("s{i}"),
                    age: 44.0 + i as f32,
                    set: ProjectionSet::new(format!("s{i}"), chans).unwrap(),
                }
            })
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn split_is_a_partition_and_stable() {
        let ds = toy(200);
        let (a, b, c) = ds.split([0.7, 0.15, 0.15]);
        assert_eq!(a.len() + b.len() + c.len(), 200);
        assert!((110..=170).contains(&a.len()), "{}", a.len());
        let sub = Dataset::new(ds.samples()[..50].to_vec()).unwrap();
        let (a2, _, _) = sub.split([0.7, 0.15, 0.15]);
        assert!(a2.samples().iter().all(|s| a.samples().iter().any(|t| t.id == s.id)));
    }

    #[test]
    fn normaliser_maps_train_range_to_unit() {
        let ds = toy(3);
        let n = Normalizer::fit(&ds).unwrap();
        assert_eq!(n.channels[0].min, 0.0);
        assert_eq!(n.channels[0].max, 17.0);
        let prep = Prepared::new(&ds, &n, &LabelScaler::identity()).unwrap();
        let (b, y) = prep.batch(&[2, 0]).unwrap();
        let cor = b.planes[0].as_ref().unwrap();
        assert_eq!(cor.shape(), &[2, 1, 2, 3]);
        assert_eq!(cor.data()[5], 1.0);
        assert_eq!(cor.data()[6], 0.0);
        assert!(b.planes[2].is_none());
        assert_eq!(y.data(), &[46.0, 44.0]);
    }

    #[test]
    fn label_scaler_round_trip() {
        let s = LabelScaler::fit(&[50.0, 60.0, 70.0]).unwrap();
        assert!((s.mean - 60.0).abs() < 1e-12);
        assert!((s.decode(s.encode(57.5)) - 57.5).abs() < 1e-5);
        assert_eq!(LabelScaler::fit(&[5.0]).unwrap().std, 1.0);
    }

    #[test]
    fn permutations_differ_by_epoch() {
        let a = epoch_permutation(50, 1, 0);
        let b = epoch_permutation(50, 1, 1);
        assert_ne!(a, b);
        let (mut sa, mut sb) = (a.clone(), b);
        sa.sort();
        sb.sort();
        assert_eq!(sa, sb);
        assert_eq!(a, epoch_permutation(50, 1, 0));
    }

    #[test]
    fn trailing_singleton_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), [4, 5]);
        assert_eq!(batches(&order[..1], 4).len(), 1);
        assert_eq!(batches(&order, 3).len(), 3);
    }

    #[test]
    fn label_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        write_labels(&p, &[("a".into(), 50.5), ("b".into(), 61.0)]).unwrap();
        let m = read_labels(&p).unwrap();
        assert_eq!(m["a"], 50.5);
        assert_eq!(fs::read_to_string(&p).unwrap().lines().next(), Some("subject_id,age"));
    }
}
