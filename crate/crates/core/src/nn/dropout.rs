use rand::{Rng, RngCore};

use super::tensor::{Scalar, Tensor};
use super::Mode;
use crate::error::{Error, Result};

/// Scaled keep-mask of one train-mode application; `None` means identity.
#[derive(Clone, Debug)]
pub struct DropoutCache<T> {
    mask: Option<Vec<T>>,
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `p` and survivors are scaled by `1 / (1 - p)`. Eval mode and `p = 0` are
/// the identity.
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    p: f32,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<(Tensor<T>, DropoutCache<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout rate {p} outside [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), DropoutCache { mask: None }));
    }
    let scale = T::lit(1.0 / (1.0 - p as f64));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f32>() < p { T::zero() } else { scale })
        .collect();
    let y = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::from_vec(x.shape(), y)?, DropoutCache { mask: Some(mask) }))
}

pub fn dropout_backward<T: Scalar>(cache: &DropoutCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    match &cache.mask {
        None => Ok(dy.clone()),
        Some(mask) if mask.len() == dy.len() => {
            let g = dy.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
            Tensor::from_vec(dy.shape(), g)
        }
        Some(mask) => Err(Error::Shape(format!(
            "dropout grad of {} values for a mask of {}",
            dy.len(),
            mask.len()
        ))),
    }
}
