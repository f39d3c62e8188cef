use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// Augmented copies are generated once before the first epoch.
    #[default]
    Precomputed,
    /// Fresh copies are drawn at the start of every epoch.
    OnTheFly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub augment_copies: usize,
    pub augment_mode: AugmentMode,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: Option<usize>,
    /// Seed of the dropout, augmentation and shuffling streams.
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr: 0.003,
            epochs: 400,
            batch_size: 64,
            augment: false,
            augment_copies: 3,
            augment_mode: AugmentMode::Precomputed,
            patience: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size {} is below 2, batch norm needs at least two samples",
                self.batch_size
            )));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1 when set".into()));
        }
        Ok(())
    }
}

/// Sampling ranges of the random perturbations. Angles are in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentParams {
    pub scale: [f64; 2],
    pub rotation_deg: [f64; 2],
    pub shear_deg: [f64; 2],
    /// Control points per side of the elastic displacement grid.
    pub elastic_grid: usize,
    /// Standard deviation of control-point displacements, in pixels.
    pub elastic_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            scale: [0.95, 1.05],
            rotation_deg: [-5.0, 5.0],
            shear_deg: [-3.0, 3.0],
            elastic_grid: 8,
            elastic_sigma: 2.0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, r: [f64; 2]| {
            if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} range {r:?} is not an ordered pair")))
            }
        };
        ordered("scale", self.scale)?;
        ordered("rotation", self.rotation_deg)?;
        ordered("shear", self.shear_deg)?;
        if self.scale[0] <= 0.0 {
            return Err(Error::Config("scale must stay positive".into()));
        }
        if self.shear_deg[0].abs() >= 45.0 || self.shear_deg[1].abs() >= 45.0 {
            return Err(Error::Config("shear must stay within (-45, 45) degrees".into()));
        }
        if self.elastic_grid < 2 {
            return Err(Error::Config("elastic grid needs at least 2x2 control points".into()));
        }
        if !(self.elastic_sigma >= 0.0 && self.elastic_sigma.is_finite()) {
            return Err(Error::Config("elastic sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of `.pjsn` projection files.
    pub dir: Option<PathBuf>,
    /// `subject_id,age` CSV; defaults to `labels.csv` inside `dir`.
    pub labels: Option<PathBuf>,
    /// Channel list, e.g. `mean,std` or `axial-std,eigen1`.
    pub channels: String,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            labels: None,
            channels: "mean,std".into(),
            split: [0.7, 0.15, 0.15],
        }
    }
}

/// A full run description as read from TOML.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainingConfig,
    pub augment: AugmentParams,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        let s = self.data.split;
        if s.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split {s:?} must be fractions summing to 1")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let t = TrainingConfig::default();
        assert_eq!((t.lr, t.epochs, t.batch_size, t.augment_copies), (0.003, 400, 64, 3));
        assert!(t.patience.is_none());
    }

    #[test]
    fn toml_overrides_and_round_trip() {
        let cfg = RunConfig::from_toml_str(
            r#"
            [data]
            channels = "std"
            [model]
            head_width = 64
            iso = true
            [model.dropout]
            placement = "between_dense"
            p = 0.5
            [train]
            lr = 0.001
            epochs = 5
            augment = true
            augment_mode = "on_the_fly"
            [augment]
            elastic_sigma = 0.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.data.channels, "std");
        assert_eq!(cfg.model.head_width, 64);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.augment_mode, AugmentMode::OnTheFly);
        assert_eq!(cfg.augment.scale, [0.95, 1.05]);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml_str("[train]\nepochs = 0").is_err());
        assert!(RunConfig::from_toml_str("[train]\nlr = -1.0").is_err());
        assert!(RunConfig::from_toml_str("[train]\nbogus = 1").is_err());
        assert!(RunConfig::from_toml_str("[augment]\nscale = [1.1, 0.9]").is_err());
        assert!(RunConfig::from_toml_str("[data]\nsplit = [0.5, 0.5, 0.5]").is_err());
    }
}
