use super::{FlatParams, Tensor};
use crate::error::{Error, Result};

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.len() != target.len() {
        return Err(Error::shape(target.shape(), pred.shape()));
    }
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        sum += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((sum / n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Plain SGD: `params − lr · grads`.
pub fn sgd_step(params: &FlatParams, grads: &FlatParams, lr: f64) -> Result<FlatParams> {
    let mut out = params.clone();
    sgd_step_in_place(out.values_mut(), grads.values(), lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Length {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    if params.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("sgd step"))
    }
}
