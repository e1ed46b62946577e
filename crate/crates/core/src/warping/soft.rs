//! Soft-DTW: the DTW sweep with `min` replaced by a temperature-`gamma`
//! soft minimum, and its gradient with respect to the distance matrix.

use serde::{Deserialize, Serialize};

use super::WarpingMatrix;
use crate::error::{Error, Result};

/// Reduction applied to the (finite) predecessors of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftMin {
    /// `-gamma · ln Σ exp(-x / gamma)`, evaluated with the minimum factored
    /// out.
    #[default]
    LogSumExp,
    /// `-gamma · Σ exp(-x / gamma)` with no logarithm. Not a soft minimum;
    /// kept for comparison only.
    ExpSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftDtwParams {
    pub gamma: f64,
    #[serde(default)]
    pub soft_min: SoftMin,
}

impl SoftDtwParams {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            soft_min: SoftMin::LogSumExp,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.gamma > 0.0 && self.gamma.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("soft-DTW gamma must be positive, got {}", self.gamma)))
        }
    }
}

fn reduce(preds: &[f64; 3], gamma: f64, kind: SoftMin) -> f64 {
    match kind {
        SoftMin::LogSumExp => {
            let min = preds.iter().cloned().fold(f64::INFINITY, f64::min);
            if !min.is_finite() {
                return f64::INFINITY;
            }
            let s: f64 = preds
                .iter()
                .filter(|p| p.is_finite())
                .map(|p| (-(p - min) / gamma).exp())
                .sum();
            min - gamma * s.ln()
        }
        SoftMin::ExpSum => {
            if preds.iter().all(|p| p.is_infinite()) {
                return f64::INFINITY;
            }
            -gamma
                * preds
                    .iter()
                    .filter(|p| p.is_finite())
                    .map(|p| (-p / gamma).exp())
                    .sum::<f64>()
        }
    }
}

fn forward(x: &WarpingMatrix, params: &SoftDtwParams) -> Vec<f64> {
    let (n, m) = (x.rows(), x.cols());
    let mut r = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let preds = if i == 0 && j == 0 {
                [0.0, f64::INFINITY, f64::INFINITY]
            } else {
                [
                    if i > 0 { r[(i - 1) * m + j] } else { f64::INFINITY },
                    if j > 0 { r[i * m + j - 1] } else { f64::INFINITY },
                    if i > 0 && j > 0 { r[(i - 1) * m + j - 1] } else { f64::INFINITY },
                ]
            };
            r[i * m + j] = x.get(i, j) + reduce(&preds, params.gamma, params.soft_min);
        }
    }
    r
}

pub fn soft_dtw(x: &WarpingMatrix, params: &SoftDtwParams) -> Result<f64> {
    params.validate()?;
    let r = forward(x, params);
    Ok(r[r.len() - 1])
}

/// Soft-DTW value and `d value / d X` (log-sum-exp reduction only).
pub fn soft_dtw_with_grad(x: &WarpingMatrix, params: &SoftDtwParams) -> Result<(f64, WarpingMatrix)> {
    params.validate()?;
    if params.soft_min != SoftMin::LogSumExp {
        return Err(Error::Usage("gradient is only defined for the log-sum-exp soft minimum".into()));
    }
    let (n, m) = (x.rows(), x.cols());
    let r = forward(x, params);
    let g = params.gamma;
    // e[i][j] = d R[n-1][m-1] / d R[i][j]; successor s contributes
    // e[s] · exp((R[s] - X[s] - R[i][j]) / gamma).
    let mut e = vec![0.0; n * m];
    e[n * m - 1] = 1.0;
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            if i == n - 1 && j == m - 1 {
                continue;
            }
            let rij = r[i * m + j];
            let mut acc = 0.0;
            for (si, sj) in [(i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                if si < n && sj < m {
                    let s = si * m + sj;
                    acc += e[s] * ((r[s] - x.get(si, sj) - rij) / g).exp();
                }
            }
            e[i * m + j] = acc;
        }
    }
    Ok((r[n * m - 1], WarpingMatrix { n, m, values: e }))
}
