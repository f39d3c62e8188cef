use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Mean squared error (accumulated in f64) and its gradient `2 (pred - target) / N`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0f64;
    let scale = T::lit(2.0 / n as f64);
    let mut grad = Vec::with_capacity(n);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        let df = d.to_f64().unwrap_or(f64::NAN);
        sum += df * df;
        grad.push(d * scale);
    }
    Ok((sum / n as f64, Tensor::from_vec(pred.shape(), grad)?))
}
