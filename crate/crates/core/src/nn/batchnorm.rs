use super::tensor::{Scalar, Tensor};
use super::Mode;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: [usize; 4],
}

/// Per-channel batch normalization over (batch, h, w). Accepts (B, C, H, W)
/// or (B, C). In train mode the running statistics move towards the batch
/// statistics (biased variance) with momentum 0.1; eval mode uses them.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let [bn, c, h, w] = x.dims4();
    if x.shape().len() < 2 || gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm over {:?} with {} scale / {} shift values",
            x.shape(),
            gamma.len(),
            beta.len()
        )));
    }
    let hw = h * w;
    let m = bn * hw;
    let xd = x.data();
    let mut y = vec![T::zero(); xd.len()];
    match mode {
        Mode::Eval => {
            for ch in 0..c {
                let inv = T::one() / (running_var[ch] + T::lit(BN_EPS)).sqrt();
                let scale = gamma[ch] * inv;
                let shift = beta[ch] - running_mean[ch] * scale;
                for b in 0..bn {
                    let off = (b * c + ch) * hw;
                    for i in off..off + hw {
                        y[i] = xd[i] * scale + shift;
                    }
                }
            }
            Ok((Tensor::from_vec(x.shape(), y)?, None))
        }
        Mode::Train => {
            if m < 2 {
                return Err(Error::BatchSize(m));
            }
            let mut xhat = vec![T::zero(); xd.len()];
            let mut inv_std = vec![T::zero(); c];
            let mom = T::lit(BN_MOMENTUM);
            for ch in 0..c {
                let mut sum = 0.0f64;
                for b in 0..bn {
                    let off = (b * c + ch) * hw;
                    sum += xd[off..off + hw].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                }
                let mean = sum / m as f64;
                let mut sq = 0.0f64;
                for b in 0..bn {
                    let off = (b * c + ch) * hw;
                    sq += xd[off..off + hw]
                        .iter()
                        .map(|v| {
                            let d = v.to_f64().unwrap() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / m as f64;
                let inv = T::lit(1.0 / (var + BN_EPS).sqrt());
                let mean_t = T::lit(mean);
                inv_std[ch] = inv;
                for b in 0..bn {
                    let off = (b * c + ch) * hw;
                    for i in off..off + hw {
                        let xh = (xd[i] - mean_t) * inv;
                        xhat[i] = xh;
                        y[i] = gamma[ch] * xh + beta[ch];
                    }
                }
                running_mean[ch] = (T::one() - mom) * running_mean[ch] + mom * mean_t;
                running_var[ch] = (T::one() - mom) * running_var[ch] + mom * T::lit(var);
            }
            Ok((
                Tensor::from_vec(x.shape(), y)?,
                Some(BatchNormCache {
                    xhat,
                    inv_std,
                    shape: [bn, c, h, w],
                }),
            ))
        }
    }
}

/// Accumulates into `dgamma`/`dbeta`; returns the input gradient.
pub fn batchnorm2d_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    dy: &Tensor<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Result<Tensor<T>> {
    let [bn, c, h, w] = cache.shape;
    if dy.dims4() != cache.shape {
        return Err(Error::Shape(format!(
            "batchnorm upstream grad {:?}, expected {:?}",
            dy.shape(),
            cache.shape
        )));
    }
    let hw = h * w;
    let m = T::lit((bn * hw) as f64);
    let dyd = dy.data();
    let mut dx = vec![T::zero(); dyd.len()];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..bn {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                sum_dy += dyd[i];
                sum_dy_xhat += dyd[i] * cache.xhat[i];
            }
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        for b in 0..bn {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dx[i] = k * (m * dyd[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
            }
        }
    }
    Tensor::from_vec(dy.shape(), dx)
}
