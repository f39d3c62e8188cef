use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::batchnorm::{batchnorm2d_backward, batchnorm2d_forward, BatchNormCache};
use super::conv::{conv2d_backward, conv2d_forward, Conv2dCache};
use super::dense::{dense_backward, dense_forward, DenseCache};
use super::dropout::{dropout_backward, dropout_forward, DropoutCache};
use super::pool::{global_avg_pool_backward, global_avg_pool_forward};
use super::tensor::{relu_backward, relu_forward, Param, Scalar, Tensor};
use super::Mode;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Batchnorm2d {
        channels: usize,
    },
    Relu,
    Dropout {
        p: f32,
    },
    GlobalAvgPool,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
                ..
            } => in_channels * filters * kernel * kernel + filters,
            LayerSpec::Batchnorm2d { channels } => 2 * channels,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::GlobalAvgPool => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv2d {
        weight: Param<T>,
        bias: Param<T>,
        stride: usize,
        pad: usize,
    },
    Batchnorm2d {
        gamma: Param<T>,
        beta: Param<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
    },
    Relu,
    Dropout {
        p: f32,
    },
    GlobalAvgPool,
    Dense {
        weight: Param<T>,
        bias: Param<T>,
    },
}

#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    Conv2d(Conv2dCache<T>),
    Batchnorm2d(BatchNormCache<T>),
    Relu(Tensor<T>),
    Dropout(DropoutCache<T>),
    GlobalAvgPool([usize; 4]),
    Dense(DenseCache<T>),
    /// Produced by eval-mode layers that keep nothing for a backward pass.
    Inference,
}

fn glorot<T: Scalar>(n: usize, fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) -> Vec<T> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    (0..n).map(|_| T::lit(rng.random_range(-limit..limit))).collect()
}

impl<T: Scalar> Layer<T> {
    /// Glorot-uniform weights, zero biases, unit BN scale.
    pub fn init(spec: &LayerSpec, name: &str, rng: &mut dyn RngCore) -> Result<Self> {
        Ok(match *spec {
            LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
                stride,
                pad,
            } => {
                let shape = [filters, in_channels, kernel, kernel];
                let n = shape.iter().product();
                let kk = kernel * kernel;
                Layer::Conv2d {
                    weight: Param::new(
                        format!("{name}.weight"),
                        Tensor::from_vec(&shape, glorot(n, in_channels * kk, filters * kk, rng))?,
                    ),
                    bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[filters])),
                    stride,
                    pad,
                }
            }
            LayerSpec::Batchnorm2d { channels } => Layer::Batchnorm2d {
                gamma: Param::new(
                    format!("{name}.gamma"),
                    Tensor::from_vec(&[channels], vec![T::one(); channels])?,
                ),
                beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
                running_mean: vec![T::zero(); channels],
                running_var: vec![T::one(); channels],
            },
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Parameter(format!("dropout rate {p} outside [0, 1)")));
                }
                Layer::Dropout { p }
            }
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Layer::Dense {
                weight: Param::new(
                    format!("{name}.weight"),
                    Tensor::from_vec(
                        &[out_features, in_features],
                        glorot(in_features * out_features, in_features, out_features, rng),
                    )?,
                ),
                bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_features])),
            },
        })
    }

    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        Ok(match self {
            Layer::Conv2d {
                weight,
                bias,
                stride,
                pad,
            } => {
                let (y, c) = conv2d_forward(x, &weight.value, &bias.value, *stride, *pad)?;
                (y, LayerCache::Conv2d(c))
            }
            Layer::Batchnorm2d {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                let (y, c) = batchnorm2d_forward(
                    x,
                    gamma.value.data(),
                    beta.value.data(),
                    running_mean,
                    running_var,
                    mode,
                )?;
                match c {
                    Some(c) => (y, LayerCache::Batchnorm2d(c)),
                    None => (y, LayerCache::Inference),
                }
            }
            Layer::Relu => {
                let y = relu_forward(x);
                (y.clone(), LayerCache::Relu(y))
            }
            Layer::Dropout { p } => {
                let (y, c) = dropout_forward(x, *p, mode, rng)?;
                (y, LayerCache::Dropout(c))
            }
            Layer::GlobalAvgPool => {
                (global_avg_pool_forward(x)?, LayerCache::GlobalAvgPool(x.dims4()))
            }
            Layer::Dense { weight, bias } => {
                let (y, c) = dense_forward(x, &weight.value, &bias.value)?;
                (y, LayerCache::Dense(c))
            }
        })
    }

    /// Eval-mode forward without caches; leaves all state untouched.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d {
                weight,
                bias,
                stride,
                pad,
            } => Ok(conv2d_forward(x, &weight.value, &bias.value, *stride, *pad)?.0),
            Layer::Batchnorm2d {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                let (mut rm, mut rv) = (running_mean.clone(), running_var.clone());
                Ok(batchnorm2d_forward(
                    x,
                    gamma.value.data(),
                    beta.value.data(),
                    &mut rm,
                    &mut rv,
                    Mode::Eval,
                )?
                .0)
            }
            Layer::Relu => Ok(relu_forward(x)),
            Layer::Dropout { .. } => Ok(x.clone()),
            Layer::GlobalAvgPool => global_avg_pool_forward(x),
            Layer::Dense { weight, bias } => Ok(dense_forward(x, &weight.value, &bias.value)?.0),
        }
    }

    pub fn backward(&mut self, cache: &LayerCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match (self, cache) {
            (Layer::Conv2d { weight, bias, .. }, LayerCache::Conv2d(c)) => {
                conv2d_backward(c, &weight.value, dy, &mut weight.grad, &mut bias.grad)
            }
            (Layer::Batchnorm2d { gamma, beta, .. }, LayerCache::Batchnorm2d(c)) => {
                batchnorm2d_backward(c, gamma.value.data(), dy, &mut gamma.grad, &mut beta.grad)
            }
            (Layer::Relu, LayerCache::Relu(out)) => relu_backward(out, dy),
            (Layer::Dropout { .. }, LayerCache::Dropout(c)) => dropout_backward(c, dy),
            (Layer::GlobalAvgPool, LayerCache::GlobalAvgPool(shape)) => {
                global_avg_pool_backward(*shape, dy)
            }
            (Layer::Dense { weight, bias }, LayerCache::Dense(c)) => {
                dense_backward(c, &weight.value, dy, &mut weight.grad, &mut bias.grad)
            }
            (layer, _) => Err(Error::State(format!(
                "no train-mode forward cache for {} layer",
                layer.kind()
            ))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Batchnorm2d { .. } => "batchnorm2d",
            Layer::Relu => "relu",
            Layer::Dropout { .. } => "dropout",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Dense { .. } => "dense",
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Batchnorm2d { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::Batchnorm2d { gamma, beta, .. } => vec![gamma, beta],
            _ => vec![],
        }
    }

    /// Non-trainable state (BN running statistics) as named buffers.
    pub fn buffers(&self, name: &str) -> Vec<(String, &[T])> {
        match self {
            Layer::Batchnorm2d {
                running_mean,
                running_var,
                ..
            } => vec![
                (format!("{name}.running_mean"), running_mean.as_slice()),
                (format!("{name}.running_var"), running_var.as_slice()),
            ],
            _ => vec![],
        }
    }

    pub fn buffers_mut(&mut self, name: &str) -> Vec<(String, &mut Vec<T>)> {
        match self {
            Layer::Batchnorm2d {
                running_mean,
                running_var,
                ..
            } => vec![
                (format!("{name}.running_mean"), running_mean),
                (format!("{name}.running_var"), running_var),
            ],
            _ => vec![],
        }
    }
}

/// A chain of layers built from specs. Layer `i` is named `{prefix}.{i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T> {
    pub prefix: String,
    pub specs: Vec<LayerSpec>,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(prefix: &str, specs: Vec<LayerSpec>, rng: &mut dyn RngCore) -> Result<Self> {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::init(s, &format!("{prefix}.{i}"), rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            prefix: prefix.to_string(),
            specs,
            layers,
        })
    }

    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor<T>, Vec<LayerCache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let (y, c) = layer.forward(&cur, mode, rng)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.infer(&cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, caches: &[LayerCache<T>], dy: &Tensor<T>) -> Result<Tensor<T>> {
        if caches.len() != self.layers.len() {
            return Err(Error::State(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut g = dy.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(LayerSpec::param_count).sum()
    }

    pub fn buffers(&self) -> Vec<(String, &[T])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.buffers(&format!("{}.{i}", self.prefix)))
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let prefix = self.prefix.clone();
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.buffers_mut(&format!("{prefix}.{i}")))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_forward_then_backward_is_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seq = Sequential::<f64>::new(
            "s",
            vec![LayerSpec::Batchnorm2d { channels: 1 }],
            &mut rng,
        )
        .unwrap();
        let x = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 2.0]).unwrap();
        let (y, caches) = seq.forward(&x, Mode::Eval, &mut rng).unwrap();
        assert!(matches!(seq.backward(&caches, &y), Err(Error::State(_))));
        assert!(matches!(seq.backward(&[], &y), Err(Error::State(_))));
    }

    #[test]
    fn param_counts_match_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = Sequential::<f32>::new(
            "s",
            vec![
                LayerSpec::Conv2d { in_channels: 2, filters: 4, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Batchnorm2d { channels: 4 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { in_features: 4, out_features: 3 },
            ],
            &mut rng,
        )
        .unwrap();
        let n: usize = seq.params().iter().map(|p| p.len()).sum();
        assert_eq!(n, seq.param_count());
        assert_eq!(n, 2 * 4 * 9 + 4 + 8 + 15);
    }
}
