use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("{count} non-finite voxel(s), first at index {first_index}")]
    NonFinite { count: usize, first_index: usize },

    #[error("value range violation: {0}")]
    Range(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("projection axis has no slices")]
    EmptyAxis,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer state error: {0}")]
    State(String),

    #[error("batch statistics need at least 2 values per channel, got {0}")]
    BatchSize(usize),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr}): loss {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        lr: f64,
        loss: f64,
    },

    #[error("input layout error for plane {plane}: {detail}")]
    Input { plane: String, detail: String },

    #[error("iso weight sharing needs equal channel counts per plane, got {0:?}")]
    IsoIncompatible([usize; 3]),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("incomplete sweep, {} record(s) missing: {}", .0.len(), .0.join(", "))]
    IncompleteSweep(Vec<String>),

    #[error("age {0} outside the supported range [44, 82]")]
    AgeOutOfRange(f32),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
