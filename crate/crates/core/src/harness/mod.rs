//! Synthetic data, batch projection of directories and the channel
//! ablation sweep.

pub mod ablation;
pub mod phantom;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use ablation::{
    ablation_sweep, cell_seed, marginal_contribution, read_results, AblationConfig, AblationResult,
    ChannelMarginal, MarginalReport, SweepOutcome,
};
pub use phantom::{generate_phantom, AgeHistogram, Phantom, PhantomKind, PhantomParams};

use crate::error::{Error, Result};
use crate::projection::{build_projection_set, pjsn, ChannelSelection, ProjectionSet};
use crate::train::{write_labels, Dataset, Sample};
use crate::volume::{load_volume, pad_symmetric, save_volume, GridSpec, Volume3D, VolumeFormat};

/// Deterministic 64-bit seed from a list of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub fn subject_id(i: usize) -> String {
    format!("sub-{i:05}")
}

/// Runs `f` on a pool of `workers` threads, or on rayon's global pool.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Phantoms for `ages`, subject `i` seeded from `(seed, i)`.
pub fn generate_phantoms(ages: &[f32], seed: u64, params: &PhantomParams) -> Result<Vec<Phantom>> {
    ages.par_iter()
        .enumerate()
        .map(|(i, &age)| generate_phantom(age, derive_seed(&[seed, i as u64]), params))
        .collect()
}

/// Generates, projects and labels `n` phantoms in memory.
pub fn phantom_dataset(
    n: usize,
    hist: &AgeHistogram,
    seed: u64,
    params: &PhantomParams,
    selection: &ChannelSelection,
) -> Result<Dataset> {
    let ages = hist.sample(n, seed)?;
    let samples = ages
        .par_iter()
        .enumerate()
        .map(|(i, &age)| {
            let ph = generate_phantom(age, derive_seed(&[seed, i as u64]), params)?;
            let id = subject_id(i);
            let set = build_projection_set(&id, &ph.volume, selection)?;
            Ok(Sample { id, age, set })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

/// Writes `n` phantom volumes plus `labels.csv` into `dir`.
pub fn write_phantoms(
    dir: &Path,
    n: usize,
    hist: &AgeHistogram,
    seed: u64,
    params: &PhantomParams,
    format: VolumeFormat,
) -> Result<Vec<(String, f32)>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ages = hist.sample(n, seed)?;
    let labels: Vec<(String, f32)> = ages
        .par_iter()
        .enumerate()
        .map(|(i, &age)| {
            let ph = generate_phantom(age, derive_seed(&[seed, i as u64]), params)?;
            let id = subject_id(i);
            save_volume(&ph.volume, &dir.join(format!("{id}.{}", format.extension())), format)?;
            Ok((id, age))
        })
        .collect::<Result<_>>()?;
    write_labels(&dir.join("labels.csv"), &labels)?;
    Ok(labels)
}

/// Projects volumes in parallel, keeping input order.
pub fn project_many(
    vols: &[(String, Volume3D)],
    selection: &ChannelSelection,
    workers: Option<usize>,
) -> Result<Vec<ProjectionSet>> {
    with_workers(workers, || {
        vols.par_iter()
            .map(|(id, v)| build_projection_set(id, v, selection))
            .collect()
    })?
}

fn volume_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".nii") || name.ends_with(".raw")
        })
        .collect();
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("subject");
    name.trim_end_matches(".nii").trim_end_matches(".raw").to_string()
}

/// Projects every `.nii` / `.raw` volume of `in_dir` into `out_dir` as
/// `<stem>.pjsn`, copying `labels.csv` along when present. Returns the
/// number of subjects written.
pub fn project_dir(
    in_dir: &Path,
    out_dir: &Path,
    selection: &ChannelSelection,
    grid: Option<&GridSpec>,
    workers: Option<usize>,
) -> Result<usize> {
    let files = volume_files(in_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let written = with_workers(workers, || {
        files
            .par_iter()
            .map(|p| {
                let mut vol = load_volume(p, VolumeFormat::from_path(p))?;
                vol.check_likelihood_range(false)?;
                if let Some(g) = grid {
                    vol = pad_symmetric(&vol, g)?;
                }
                let id = stem(p);
                let set = build_projection_set(&id, &vol, selection)?;
                pjsn::write(&set, &out_dir.join(format!("{id}.pjsn")))
            })
            .collect::<Result<Vec<()>>>()
    })??;
    let labels = in_dir.join("labels.csv");
    if labels.exists() {
        let dst = out_dir.join("labels.csv");
        fs::copy(&labels, &dst).map_err(|e| Error::io(&dst, e))?;
    }
    Ok(written.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_stable() {
        assert_eq!(derive_seed(&[1, 2]), derive_seed(&[1, 2]));
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
    }

    #[test]
    fn phantom_dataset_shapes() {
        let params = PhantomParams {
            dims: [12, 10, 8],
            ..PhantomParams::default()
        };
        let ds = phantom_dataset(5, &AgeHistogram::uniform(5), 2, &params, &ChannelSelection::mean_std()).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.channels_per_plane(), [2, 2, 2]);
        // coronal: rows z, cols x; axial: rows y, cols x; sagittal: rows z, cols y
        assert_eq!(ds.input_dims(), [(8, 12), (10, 12), (8, 10)]);
    }

    #[test]
    fn directory_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let vols = tmp.path().join("v");
        let proj = tmp.path().join("p");
        let params = PhantomParams {
            dims: [10, 10, 8],
            ..PhantomParams::default()
        };
        write_phantoms(&vols, 3, &AgeHistogram::uniform(3), 1, &params, VolumeFormat::Nifti1).unwrap();
        let n = project_dir(&vols, &proj, &ChannelSelection::mean_std(), None, Some(1)).unwrap();
        assert_eq!(n, 3);
        let ds = Dataset::load_dir(&proj, &proj.join("labels.csv")).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.samples()[0].id, "sub-00000");
    }
}
