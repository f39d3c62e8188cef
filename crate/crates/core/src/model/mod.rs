//! The projection regressor: one conv stack per plane (or one shared stack
//! in iso mode), global average pooling, concatenation and a dense head
//! ending in a single linear output.

pub mod checkpoint;
mod config;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{DropoutPlacement, ModelConfig};

use crate::error::{Error, Result};
use crate::nn::{LayerCache, Mode, Param, Scalar, Sequential, Tensor};
use crate::projection::Plane;

/// Per-plane input tensors `(batch, channels, h, w)`; `None` for planes the
/// model does not use. The explicit size lets a model without any stack
/// (bias only) still produce one prediction per subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    pub planes: [Option<Tensor<T>>; 3],
}

impl<T: Scalar> Batch<T> {
    pub fn new(size: usize, planes: [Option<Tensor<T>>; 3]) -> Self {
        Self { size, planes }
    }
}

/// Caches of one train-mode forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    batch: usize,
    stacks: Vec<(usize, Vec<LayerCache<T>>)>,
    head: Vec<LayerCache<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    config: ModelConfig,
    input_dims: [(usize, usize); 3],
    /// One per active plane, or a single shared stack when iso.
    stacks: Vec<Sequential<T>>,
    head: Sequential<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds and initialises a model from its config and per-plane input
    /// image sizes (ignored for planes without channels).
    pub fn new(config: ModelConfig, input_dims: [(usize, usize); 3]) -> Result<Self> {
        config.validate()?;
        let mut dims = [(0, 0); 3];
        for plane in config.active_planes() {
            let d = input_dims[plane.index()];
            config.check_input_dims(plane, d)?;
            dims[plane.index()] = d;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let stacks = if config.iso {
            vec![Sequential::new(
                "stack.shared",
                config.stack_specs(config.channels_per_plane[0]),
                &mut rng,
            )?]
        } else {
            config
                .active_planes()
                .into_iter()
                .map(|p| {
                    Sequential::new(
                        &format!("stack.{p}"),
                        config.stack_specs(config.channels_per_plane[p.index()]),
                        &mut rng,
                    )
                })
                .collect::<Result<_>>()?
        };
        let head = Sequential::new("head", config.head_specs(), &mut rng)?;
        Ok(Self {
            config,
            input_dims: dims,
            stacks,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dims(&self) -> [(usize, usize); 3] {
        self.input_dims
    }

    pub fn is_iso(&self) -> bool {
        self.config.iso
    }

    fn stack_index(&self, plane: Plane) -> usize {
        if self.config.iso {
            0
        } else {
            self.config
                .active_planes()
                .iter()
                .position(|&p| p == plane)
                .expect("active plane")
        }
    }

    /// Switches to one shared stack (the first plane's weights are kept).
    pub fn set_iso(&mut self) -> Result<()> {
        if self.config.iso {
            return Ok(());
        }
        let c = self.config.channels_per_plane;
        if c[0] == 0 || c.iter().any(|&x| x != c[0]) {
            return Err(Error::IsoIncompatible(c));
        }
        let mut shared = self.stacks.swap_remove(0);
        rename(&mut shared, "stack.shared");
        self.stacks = vec![shared];
        self.config.iso = true;
        Ok(())
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<usize> {
        for plane in Plane::ALL {
            let want_c = self.config.channels_per_plane[plane.index()];
            match (&batch.planes[plane.index()], want_c) {
                (None, 0) => {}
                (Some(_), 0) => {
                    return Err(Error::Input {
                        plane: plane.to_string(),
                        detail: "model has no stack for this plane".into(),
                    })
                }
                (None, c) => {
                    return Err(Error::Input {
                        plane: plane.to_string(),
                        detail: format!("missing input, model expects {c} channel(s)"),
                    })
                }
                (Some(t), c) => {
                    let (h, w) = self.input_dims[plane.index()];
                    let [b, tc, th, tw] = t.dims4();
                    if t.shape().len() != 4 || tc != c || th != h || tw != w {
                        return Err(Error::Input {
                            plane: plane.to_string(),
                            detail: format!(
                                "got {:?}, expected (batch, {c}, {h}, {w})",
                                t.shape()
                            ),
                        });
                    }
                    if b != batch.size {
                        return Err(Error::Input {
                            plane: plane.to_string(),
                            detail: format!("batch of {b} in a batch declared as {}", batch.size),
                        });
                    }
                }
            }
        }
        if batch.size == 0 {
            return Err(Error::Input {
                plane: "all".into(),
                detail: "empty batch".into(),
            });
        }
        Ok(batch.size)
    }

    fn concat(&self, feats: &[Tensor<T>], batch: usize) -> Result<Tensor<T>> {
        let f = self.config.features_per_stack();
        let total = f * feats.len();
        let mut out = vec![T::zero(); batch * total];
        for (k, t) in feats.iter().enumerate() {
            for b in 0..batch {
                out[b * total + k * f..][..f].copy_from_slice(&t.data()[b * f..][..f]);
            }
        }
        Tensor::from_vec(&[batch, total], out)
    }

    /// Train- or eval-mode forward keeping caches for [`Model::backward`].
    pub fn forward(
        &mut self,
        batch: &Batch<T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor<T>, Tape<T>)> {
        let b = self.check_batch(batch)?;
        let mut feats = Vec::new();
        let mut stack_caches = Vec::new();
        for plane in self.config.active_planes() {
            let idx = self.stack_index(plane);
            let x = batch.planes[plane.index()].as_ref().expect("checked");
            let (f, caches) = self.stacks[idx].forward(x, mode, rng)?;
            feats.push(f);
            stack_caches.push((idx, caches));
        }
        let x = self.concat(&feats, b)?;
        let (y, head) = self.head.forward(&x, mode, rng)?;
        Ok((
            y,
            Tape {
                batch: b,
                stacks: stack_caches,
                head,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d prediction`. Shared
    /// iso weights receive the sum over the three plane applications.
    pub fn backward(&mut self, tape: &Tape<T>, dpred: &Tensor<T>) -> Result<()> {
        let dx = self.head.backward(&tape.head, dpred)?;
        let f = self.config.features_per_stack();
        let total = f * tape.stacks.len();
        for (k, (idx, caches)) in tape.stacks.iter().enumerate() {
            let mut g = vec![T::zero(); tape.batch * f];
            for b in 0..tape.batch {
                g[b * f..][..f].copy_from_slice(&dx.data()[b * total + k * f..][..f]);
            }
            let g = Tensor::from_vec(&[tape.batch, f], g)?;
            self.stacks[*idx].backward(caches, &g)?;
        }
        Ok(())
    }

    /// Per-plane feature vectors `(batch, features)` in eval mode.
    pub fn features(&self, batch: &Batch<T>) -> Result<Vec<(Plane, Tensor<T>)>> {
        self.check_batch(batch)?;
        self.config
            .active_planes()
            .into_iter()
            .map(|p| {
                let x = batch.planes[p.index()].as_ref().expect("checked");
                Ok((p, self.stacks[self.stack_index(p)].infer(x)?))
            })
            .collect()
    }

    /// Deterministic eval-mode predictions, shape `(batch, 1)`.
    pub fn predict(&self, batch: &Batch<T>) -> Result<Tensor<T>> {
        let b = self.check_batch(batch)?;
        let feats: Vec<Tensor<T>> = self.features(batch)?.into_iter().map(|(_, f)| f).collect();
        let x = self.concat(&feats, b)?;
        self.head.infer(&x)
    }

    /// Unique trainable parameters in a fixed order: stacks, then head.
    pub fn params(&self) -> Vec<&Param<T>> {
        self.stacks
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|s| s.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.stacks
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(|s| s.params_mut())
            .collect()
    }

    /// Batch-norm running statistics by name.
    pub fn buffers(&self) -> Vec<(String, &[T])> {
        self.stacks
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|s| s.buffers())
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        self.stacks
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(|s| s.buffers_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn stacks(&self) -> &[Sequential<T>] {
        &self.stacks
    }

    pub fn head(&self) -> &Sequential<T> {
        &self.head
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            input_dims: self.input_dims,
            stacks: self.stacks.iter().map(cast_seq).collect(),
            head: cast_seq(&self.head),
        }
    }
}

fn rename<T: Scalar>(seq: &mut Sequential<T>, prefix: &str) {
    let old = seq.prefix.clone();
    for p in seq.params_mut() {
        p.name = p.name.replacen(&old, prefix, 1);
    }
    seq.prefix = prefix.to_string();
}

fn cast_seq<T: Scalar, U: Scalar>(seq: &Sequential<T>) -> Sequential<U> {
    use crate::nn::Layer;
    let cp = |p: &Param<T>| Param::new(p.name.clone(), p.value.cast::<U>());
    let cv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64().unwrap_or(0.0))).collect();
    Sequential {
        prefix: seq.prefix.clone(),
        specs: seq.specs.clone(),
        layers: seq
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d { weight, bias, stride, pad } => Layer::Conv2d {
                    weight: cp(weight),
                    bias: cp(bias),
                    stride: *stride,
                    pad: *pad,
                },
                Layer::Batchnorm2d { gamma, beta, running_mean, running_var } => Layer::Batchnorm2d {
                    gamma: cp(gamma),
                    beta: cp(beta),
                    running_mean: cv(running_mean),
                    running_var: cv(running_var),
                },
                Layer::Relu => Layer::Relu,
                Layer::Dropout { p } => Layer::Dropout { p: *p },
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                Layer::Dense { weight, bias } => Layer::Dense {
                    weight: cp(weight),
                    bias: cp(bias),
                },
            })
            .collect(),
    }
}
