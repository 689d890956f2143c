use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// Mean absolute error over all entries and its gradient (subgradient 0 at ties).
pub fn l1_loss(pred: &Tensor2D, target: &Tensor2D) -> Result<(f64, Tensor2D)> {
    if pred.shape() != target.shape() {
        return Err(Error::dims(
            "l1_loss",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let n = pred.len();
    if n == 0 {
        return Ok((0.0, Tensor2D::zeros(pred.rows(), pred.cols())));
    }
    let inv = 1.0 / n as f64;
    let mut grad = Tensor2D::zeros(pred.rows(), pred.cols());
    let mut total = 0.0;
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - t;
        total += d.abs();
        *g = if d > 0.0 {
            inv
        } else if d < 0.0 {
            -inv
        } else {
            0.0
        };
    }
    Ok((total * inv, grad))
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Tensor2D) -> Tensor2D {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

/// Mean cross-entropy of row-wise softmax against integer targets.
/// Returns `(loss, dL/dlogits, probabilities)`.
pub fn softmax_cross_entropy(logits: &Tensor2D, targets: &[usize]) -> Result<(f64, Tensor2D, Tensor2D)> {
    if logits.rows() != targets.len() {
        return Err(Error::dims("softmax_cross_entropy rows", targets.len(), logits.rows()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::invalid(format!("target class {t} out of range {}", logits.cols())));
    }
    let probs = softmax_rows(logits);
    let n = targets.len().max(1) as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        loss -= probs.get(r, t).max(1e-300).ln();
        let row = grad.row_mut(r);
        row[t] -= 1.0;
        row.iter_mut().for_each(|g| *g /= n);
    }
    Ok((loss / n, grad, probs))
}
