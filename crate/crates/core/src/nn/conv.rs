//! 2D cross-correlation via im2col + one GEMM per batch.

use super::tensor::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    if stride == 0 || span < kernel {
        return None;
    }
    Some((span - kernel) / stride + 1)
}

#[derive(Clone, Debug)]
pub struct Conv2dCache<T> {
    /// im2col matrix, `(c_in * k * k) x (batch * h_out * w_out)`.
    cols: Vec<T>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
    kernel: usize,
    stride: usize,
    pad: usize,
}

/// Valid output index range `[lo, hi)` such that `o * stride + k - pad` lies in `[0, len)`.
#[inline]
fn valid_range(out: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o*stride + k >= pad  and  o*stride + k - pad < len
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// `x`: (batch, c_in, h, w); `w`: (c_out, c_in, k, k); `b`: (c_out).
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    if x.shape().len() != 4 || w.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects 4D input and weight, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let [bn, cin, h, wd] = x.dims4();
    let [cout, wcin, kh, kw] = w.dims4();
    if wcin != cin || kh != kw || b.len() != cout {
        return Err(Error::Shape(format!(
            "conv2d input {:?}, weight {:?}, bias {:?} disagree",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let k = kh;
    let (ho, wo) = match (conv_out_dim(h, k, stride, pad), conv_out_dim(wd, k, stride, pad)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Shape(format!(
                "{h}x{wd} input too small for kernel {k}, stride {stride}, pad {pad}"
            )))
        }
    };
    let p = ho * wo;
    let ncols = bn * p;
    let rows = cin * k * k;
    let mut cols = vec![T::zero(); rows * ncols];
    let xd = x.data();
    for c in 0..cin {
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(ho, h, ky, stride, pad);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(wo, wd, kx, stride, pad);
                let row = &mut cols[((c * k + ky) * k + kx) * ncols..][..ncols];
                for bi in 0..bn {
                    let xin = &xd[(bi * cin + c) * h * wd..][..h * wd];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let dst = &mut row[bi * p + oy * wo..][..wo];
                        let src = &xin[iy * wd..][..wd];
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
    let mut yt = vec![T::zero(); cout * ncols];
    gemm(cout, rows, ncols, w.data(), false, &cols, false, T::zero(), &mut yt);
    let mut y = vec![T::zero(); bn * cout * p];
    let bd = b.data();
    for o in 0..cout {
        let src = &yt[o * ncols..][..ncols];
        for bi in 0..bn {
            let dst = &mut y[(bi * cout + o) * p..][..p];
            for (d, &s) in dst.iter_mut().zip(&src[bi * p..][..p]) {
                *d = s + bd[o];
            }
        }
    }
    Ok((
        Tensor::from_vec(&[bn, cout, ho, wo], y)?,
        Conv2dCache {
            cols,
            in_shape: [bn, cin, h, wd],
            out_hw: (ho, wo),
            kernel: k,
            stride,
            pad,
        },
    ))
}

/// Accumulates into `dw`/`db` and returns the input gradient.
pub fn conv2d_backward<T: Scalar>(
    cache: &Conv2dCache<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    dw: &mut [T],
    db: &mut [T],
) -> Result<Tensor<T>> {
    let [bn, cin, h, wd] = cache.in_shape;
    let (ho, wo) = cache.out_hw;
    let cout = w.shape()[0];
    let k = cache.kernel;
    if dy.shape() != [bn, cout, ho, wo] {
        return Err(Error::Shape(format!(
            "conv2d upstream grad {:?}, expected {:?}",
            dy.shape(),
            [bn, cout, ho, wo]
        )));
    }
    if dw.len() != w.len() || db.len() != cout {
        return Err(Error::Shape("conv2d gradient buffers do not match parameters".into()));
    }
    let p = ho * wo;
    let ncols = bn * p;
    let rows = cin * k * k;
    let dyd = dy.data();
    let mut dyt = vec![T::zero(); cout * ncols];
    for o in 0..cout {
        let dst = &mut dyt[o * ncols..][..ncols];
        let mut acc = T::zero();
        for bi in 0..bn {
            let src = &dyd[(bi * cout + o) * p..][..p];
            dst[bi * p..][..p].copy_from_slice(src);
            for &g in src {
                acc += g;
            }
        }
        db[o] += acc;
    }
    gemm(cout, ncols, rows, &dyt, false, &cache.cols, true, T::one(), dw);
    let mut dcols = vec![T::zero(); rows * ncols];
    gemm(rows, cout, ncols, w.data(), true, &dyt, false, T::zero(), &mut dcols);

    let mut dx = vec![T::zero(); bn * cin * h * wd];
    let (stride, pad) = (cache.stride, cache.pad);
    for c in 0..cin {
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(ho, h, ky, stride, pad);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(wo, wd, kx, stride, pad);
                let row = &dcols[((c * k + ky) * k + kx) * ncols..][..ncols];
                for bi in 0..bn {
                    let xin = &mut dx[(bi * cin + c) * h * wd..][..h * wd];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let src = &row[bi * p + oy * wo..][..wo];
                        let dst = &mut xin[iy * wd..][..wd];
                        for ox in ox_lo..ox_hi {
                            dst[ox * stride + kx - pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[bn, cin, h, wd], dx)
}
