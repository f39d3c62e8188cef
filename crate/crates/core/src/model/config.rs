use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{conv_out_dim, LayerSpec};
use crate::projection::Plane;

/// Where dropout sits. Batch normalization follows every second conv layer
/// in both placements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "placement", rename_all = "snake_case")]
pub enum DropoutPlacement {
    /// After every second conv layer (with its batch norm).
    BetweenConv { p: f32 },
    /// Before and between the head's dense layers.
    BetweenDense { p: f32 },
}

impl Default for DropoutPlacement {
    fn default() -> Self {
        DropoutPlacement::BetweenConv { p: 0.2 }
    }
}

impl DropoutPlacement {
    pub fn rate(&self) -> f32 {
        match *self {
            DropoutPlacement::BetweenConv { p } | DropoutPlacement::BetweenDense { p } => p,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input channels fed to the coronal, axial and sagittal stacks. A zero
    /// count drops that stack.
    pub channels_per_plane: [usize; 3],
    pub conv_layers_per_stack: usize,
    pub first_filters: usize,
    pub final_filters: usize,
    pub kernel: usize,
    pub head_width: usize,
    pub iso: bool,
    pub dropout: DropoutPlacement,
    /// Seed of the weight initialisation stream.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels_per_plane: [2, 2, 2],
            conv_layers_per_stack: 13,
            first_filters: 4,
            final_filters: 256,
            kernel: 3,
            head_width: 308,
            iso: false,
            dropout: DropoutPlacement::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_channels(channels_per_plane: [usize; 3]) -> Self {
        Self {
            channels_per_plane,
            ..Self::default()
        }
    }

    pub fn active_planes(&self) -> Vec<Plane> {
        Plane::ALL
            .into_iter()
            .filter(|p| self.channels_per_plane[p.index()] > 0)
            .collect()
    }

    /// Filters of conv layer `i` (1-based): doubling every two layers from
    /// `first_filters`, capped at `final_filters`.
    pub fn filters(&self, i: usize) -> usize {
        let doublings = ((i - 1) / 2).min(30) as u32;
        (self.first_filters << doublings).min(self.final_filters)
    }

    /// Even-numbered conv layers downsample with stride 2.
    pub fn stride(&self, i: usize) -> usize {
        if i % 2 == 0 {
            2
        } else {
            1
        }
    }

    pub fn downsampling_stages(&self) -> usize {
        self.conv_layers_per_stack / 2
    }

    pub fn features_per_stack(&self) -> usize {
        self.filters(self.conv_layers_per_stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_layers_per_stack == 0 {
            return Err(Error::Config("a stack needs at least one conv layer".into()));
        }
        if self.first_filters == 0 || self.final_filters < self.first_filters {
            return Err(Error::Config(format!(
                "filter schedule {} -> {} is invalid",
                self.first_filters, self.final_filters
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.head_width == 0 {
            return Err(Error::Config("head width must be positive".into()));
        }
        let p = self.dropout.rate();
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if self.iso {
            let c = self.channels_per_plane;
            if c[0] == 0 || c.iter().any(|&x| x != c[0]) {
                return Err(Error::IsoIncompatible(c));
            }
        }
        Ok(())
    }

    /// Every stride-2 stage must see at least 2 pixels per side.
    pub fn check_input_dims(&self, plane: Plane, dims: (usize, usize)) -> Result<()> {
        let (mut h, mut w) = dims;
        for i in 1..=self.conv_layers_per_stack {
            let s = self.stride(i);
            if s == 2 && (h < 2 || w < 2) {
                return Err(Error::Config(format!(
                    "{plane} input {}x{} is too small for {} downsampling stages",
                    dims.0,
                    dims.1,
                    self.downsampling_stages()
                )));
            }
            let pad = self.kernel / 2;
            h = conv_out_dim(h, self.kernel, s, pad).unwrap_or(0);
            w = conv_out_dim(w, self.kernel, s, pad).unwrap_or(0);
        }
        if h == 0 || w == 0 {
            return Err(Error::Config(format!("{plane} input {dims:?} collapses to nothing")));
        }
        Ok(())
    }

    pub fn stack_specs(&self, in_channels: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut cin = in_channels;
        for i in 1..=self.conv_layers_per_stack {
            let f = self.filters(i);
            specs.push(LayerSpec::Conv2d {
                in_channels: cin,
                filters: f,
                kernel: self.kernel,
                stride: self.stride(i),
                pad: self.kernel / 2,
            });
            let second = i % 2 == 0;
            if second {
                specs.push(LayerSpec::Batchnorm2d { channels: f });
            }
            specs.push(LayerSpec::Relu);
            if let (true, DropoutPlacement::BetweenConv { p }) = (second, self.dropout) {
                specs.push(LayerSpec::Dropout { p });
            }
            cin = f;
        }
        specs.push(LayerSpec::GlobalAvgPool);
        specs
    }

    pub fn head_specs(&self) -> Vec<LayerSpec> {
        let n_active = self.active_planes().len();
        if n_active == 0 {
            return vec![LayerSpec::Dense {
                in_features: 0,
                out_features: 1,
            }];
        }
        let concat = n_active * self.features_per_stack();
        let w = self.head_width;
        match self.dropout {
            DropoutPlacement::BetweenDense { p } => vec![
                LayerSpec::Dropout { p },
                LayerSpec::Dense { in_features: concat, out_features: w },
                LayerSpec::Relu,
                LayerSpec::Dropout { p },
                LayerSpec::Dense { in_features: w, out_features: 1 },
            ],
            DropoutPlacement::BetweenConv { .. } => vec![
                LayerSpec::Dense { in_features: concat, out_features: w },
                LayerSpec::Relu,
                LayerSpec::Dense { in_features: w, out_features: 1 },
            ],
        }
    }

    /// Trainable parameters per stack for the given plane.
    pub fn stack_param_count(&self, plane: Plane) -> usize {
        let c = self.channels_per_plane[plane.index()];
        if c == 0 {
            return 0;
        }
        self.stack_specs(c).iter().map(LayerSpec::param_count).sum()
    }

    pub fn head_param_count(&self) -> usize {
        self.head_specs().iter().map(LayerSpec::param_count).sum()
    }

    /// Total trainable parameters, counting shared iso weights once.
    pub fn param_count(&self) -> usize {
        let stacks: usize = if self.iso {
            self.stack_param_count(Plane::Coronal)
        } else {
            Plane::ALL.iter().map(|&p| self.stack_param_count(p)).sum()
        };
        stacks + self.head_param_count()
    }
}
