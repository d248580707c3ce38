//! Regression losses over flattened prediction/target batches.

use crate::{NnError, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossKind {
    /// Mean squared error; its square root is reported as the RMSE metric.
    #[default]
    Mse,
    /// Literal root-mean-squared error as the objective.
    Rmse,
}

/// Returns the loss value and its gradient with respect to `pred`.
pub fn loss_and_grad<T: Scalar>(kind: LossKind, pred: &Tensor<T>, target: &[T]) -> Result<(f64, Tensor<T>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NnError::ShapeMismatch {
            context: "loss target",
            expected: pred.shape().to_vec(),
            found: vec![target.len()],
        });
    }
    let n = pred.len() as f64;
    let diff: Vec<f64> = pred
        .data()
        .iter()
        .zip(target)
        .map(|(p, t)| p.as_f64() - t.as_f64())
        .collect();
    let mse = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let (loss, scale) = match kind {
        LossKind::Mse => (mse, 2.0 / n),
        LossKind::Rmse => {
            let rmse = mse.sqrt();
            // d sqrt(mse) = d mse / (2 sqrt(mse)); zero at a perfect fit
            let s = if rmse > 0.0 { 1.0 / (n * rmse) } else { 0.0 };
            (rmse, s)
        }
    };
    let grad = diff.iter().map(|d| T::of(d * scale)).collect();
    Ok((loss, Tensor::from_vec(pred.shape(), grad)?))
}
