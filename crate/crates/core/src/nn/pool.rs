use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// (B, C, H, W) -> (B, C) by averaging over space.
pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() != 4 {
        return Err(Error::Shape(format!("global pooling needs 4D input, got {:?}", x.shape())));
    }
    let [b, c, h, w] = x.dims4();
    let hw = h * w;
    let inv = T::lit(1.0 / hw as f64);
    let out = x.data().chunks(hw).map(|s| s.iter().copied().sum::<T>() * inv).collect();
    Tensor::from_vec(&[b, c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(in_shape: [usize; 4], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = in_shape;
    if dy.shape() != [b, c] {
        return Err(Error::Shape(format!("pool grad {:?}, expected {:?}", dy.shape(), [b, c])));
    }
    let inv = T::lit(1.0 / (h * w) as f64);
    let mut dx = Vec::with_capacity(b * c * h * w);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g * inv, h * w));
    }
    Tensor::from_vec(&in_shape, dx)
}
