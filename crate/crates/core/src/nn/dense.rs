use super::tensor::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    x: Vec<T>,
    batch: usize,
    in_features: usize,
}

/// `y = x W^T + b` with `x`: (batch, in), `w`: (out, in), `b`: (out).
pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, DenseCache<T>)> {
    let batch = x.shape().first().copied().unwrap_or(0);
    let inf = if batch == 0 { 0 } else { x.len() / batch };
    let [out, win, ..] = w.dims4();
    if x.shape().len() != 2 || w.shape().len() != 2 || win != inf || b.len() != out {
        return Err(Error::Shape(format!(
            "dense input {:?}, weight {:?}, bias {:?} disagree",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut y = vec![T::zero(); batch * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(b.data());
    }
    gemm(batch, inf, out, x.data(), false, w.data(), true, T::one(), &mut y);
    Ok((
        Tensor::from_vec(&[batch, out], y)?,
        DenseCache {
            x: x.data().to_vec(),
            batch,
            in_features: inf,
        },
    ))
}

pub fn dense_backward<T: Scalar>(
    cache: &DenseCache<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    dw: &mut [T],
    db: &mut [T],
) -> Result<Tensor<T>> {
    let out = w.shape()[0];
    if dy.shape() != [cache.batch, out] {
        return Err(Error::Shape(format!(
            "dense upstream grad {:?}, expected {:?}",
            dy.shape(),
            [cache.batch, out]
        )));
    }
    for row in dy.data().chunks(out) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    gemm(out, cache.batch, cache.in_features, dy.data(), true, &cache.x, false, T::one(), dw);
    let mut dx = vec![T::zero(); cache.batch * cache.in_features];
    gemm(cache.batch, out, cache.in_features, dy.data(), false, w.data(), false, T::zero(), &mut dx);
    Tensor::from_vec(&[cache.batch, cache.in_features], dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_arithmetic() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0f64, 2., 3., -1., 0., 1.]).unwrap();
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 0., 0., 1., 1., 1.]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let (y, _) = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.5, 5.5, -0.5, -0.5]);
    }

    #[test]
    fn bias_only_layer() {
        let x = Tensor::<f64>::zeros(&[3, 0]);
        let w = Tensor::zeros(&[1, 0]);
        let b = Tensor::from_vec(&[1], vec![2.5]).unwrap();
        let (y, c) = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[2.5, 2.5, 2.5]);
        let mut db = vec![0.0];
        let dy = Tensor::from_vec(&[3, 1], vec![1.0, 1.0, 1.0]).unwrap();
        dense_backward(&c, &w, &dy, &mut [], &mut db).unwrap();
        assert_eq!(db, vec![3.0]);
    }
}
