//! Loss kernels.

use crate::error::{Error, Result};

/// Mean of squared residuals and its gradient with respect to `pred`.
pub(crate) fn mse(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    (loss, grad)
}

/// Row-wise softmax computed with the max subtracted.
pub(crate) fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, dst) in logits.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = (x - max).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d /= z);
    }
    out
}

/// Mean cross-entropy over the batch using log-sum-exp. Returns the loss and
/// the softmax probabilities (the gradient is `(p - onehot) / batch`).
pub(crate) fn cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Usage(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut loss = 0.0;
    for (row, &label) in logits.chunks(classes).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    loss /= labels.len() as f64;
    Ok((loss, softmax_rows(logits, classes)))
}
