//! Per-channel batch normalization over `[batch, channels, ...]` tensors.

pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance, used for normalization.
    pub var: Vec<f64>,
    /// Unbiased variance, used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

pub(crate) fn batch_stats(x: &[f64], batch: usize, channels: usize, plane: usize) -> BatchStats {
    let n = (batch * plane) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            s += x[off..off + plane].iter().sum::<f64>();
        }
        let m = s / n;
        let mut ss = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            ss += x[off..off + plane].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = ss / n;
    }
    let var_unbiased = var
        .iter()
        .map(|v| if n > 1.0 { v * n / (n - 1.0) } else { *v })
        .collect();
    BatchStats {
        mean,
        var,
        var_unbiased,
    }
}

/// Returns `(y, xhat)` where `xhat` is the normalized input before the affine
/// transform.
#[allow(clippy::too_many_arguments)]
pub(crate) fn normalize(
    x: &[f64],
    batch: usize,
    channels: usize,
    plane: usize,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xhat)
}

/// Gradient through the batch-statistics path (train mode).
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_train(
    dy: &[f64],
    xhat: &[f64],
    batch: usize,
    channels: usize,
    plane: usize,
    gamma: &[f64],
    inv_std: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let n = (batch * plane) as f64;
    let mut dx = vec![0.0; dy.len()];
    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat[i];
            }
        }
        dgamma[c] += sum_dy_xhat;
        dbeta[c] += sum_dy;
        let k = gamma[c] * inv_std[c] / n;
        for b in 0..batch {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                dx[i] = k * (n * dy[i] - sum_dy - xhat[i] * sum_dy_xhat);
            }
        }
    }
    dx
}

/// Gradient when normalizing with fixed (running) statistics.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_eval(
    dy: &[f64],
    xhat: &[f64],
    batch: usize,
    channels: usize,
    plane: usize,
    gamma: &[f64],
    inv_std: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * plane;
            for i in off..off + plane {
                dgamma[c] += dy[i] * xhat[i];
                dbeta[c] += dy[i];
                dx[i] = dy[i] * gamma[c] * inv_std[c];
            }
        }
    }
    dx
}
