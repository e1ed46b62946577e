//! Exact DTW, Sakoe-Chiba banded DTW, soft-DTW and warping paths over a
//! pairwise element-distance matrix.
//!
//! All recursions follow the same sweep: cell `(i, j)` adds the reduction of
//! its three predecessors `(i-1, j)`, `(i, j-1)`, `(i-1, j-1)`; predecessors
//! outside the matrix (or the band) count as `+inf` and cell `(0, 0)` reduces
//! over a single zero.

mod oracle;
mod soft;

pub use oracle::{brute_force_dtw, BRUTE_FORCE_MAX_LEN};
pub use soft::{soft_dtw, soft_dtw_with_grad, SoftDtwParams, SoftMin};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance between two scalar samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementwiseMode {
    #[default]
    Abs,
    Squared,
}

impl ElementwiseMode {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseMode::Abs => (a - b).abs(),
            ElementwiseMode::Squared => (a - b) * (a - b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtwParams {
    /// Sakoe-Chiba half-width in samples; `None` is unconstrained.
    pub band_radius: Option<usize>,
    pub elementwise_mode: ElementwiseMode,
}

impl DtwParams {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    pub fn banded(radius: usize) -> Self {
        Self {
            band_radius: Some(radius),
            ..Self::default()
        }
    }

    /// Band whose radius is `fraction` of `len`, rounded to the nearest sample.
    pub fn banded_fraction(fraction: f64, len: usize) -> Self {
        Self::banded((fraction * len as f64).round() as usize)
    }
}

/// Whether cell `(i, j)` of an `n × m` matrix lies inside the band
/// `|i·m/n − j| ≤ r`, evaluated exactly in integers.
#[inline]
pub fn in_band(i: usize, j: usize, n: usize, m: usize, radius: Option<usize>) -> bool {
    match radius {
        None => true,
        Some(r) => (i * m).abs_diff(j * n) <= r * n,
    }
}

/// `n × m` matrix of element-pair distances, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpingMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl WarpingMatrix {
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Dimension("warping matrix needs n, m >= 1".into()));
        }
        if values.len() != n * m {
            return Err(Error::Dimension(format!(
                "{n}x{m} warping matrix given {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Dimension(format!(
                "warping matrix entries must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { n, m, values })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn transpose(&self) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.n {
            for j in 0..self.m {
                values[j * self.n + i] = self.get(i, j);
            }
        }
        Self {
            n: self.m,
            m: self.n,
            values,
        }
    }

    /// Sum of entries `(i, i)` for `i < min(n, m)`.
    pub fn diagonal_sum(&self) -> f64 {
        (0..self.n.min(self.m)).map(|i| self.get(i, i)).sum()
    }

    /// One row per line, comma-separated, full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.m) {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v}").expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

/// Element-pair distance matrix between two series.
pub fn pairwise_matrix(a: &[f64], b: &[f64], mode: ElementwiseMode) -> Result<WarpingMatrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Dimension("pairwise_matrix needs non-empty series".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series contains a non-finite sample".into()));
    }
    let mut values = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        values.extend(b.iter().map(|&y| mode.apply(x, y)));
    }
    WarpingMatrix::new(a.len(), b.len(), values)
}

/// Monotone, contiguous alignment from `(0, 0)` to `(n-1, m-1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpingPath(Vec<(usize, usize)>);

impl WarpingPath {
    pub fn cells(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks the structural invariants for an `n × m` matrix.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Usage(format!("invalid warping path: {msg}")));
        match (self.0.first(), self.0.last()) {
            (Some(&(0, 0)), Some(&last)) if last == (n - 1, m - 1) => {}
            _ => return bad(format!("must run from (0,0) to ({}, {})", n - 1, m - 1)),
        }
        for w in self.0.windows(2) {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
                return bad(format!("step {:?} -> {:?}", w[0], w[1]));
            }
        }
        Ok(())
    }

    /// Sum of matrix entries along the path, in path order.
    pub fn cost(&self, x: &WarpingMatrix) -> f64 {
        self.0.iter().fold(0.0, |acc, &(i, j)| acc + x.get(i, j))
    }
}

/// Cumulative-cost table of the exact recursion. Cells outside the band hold
/// `+inf`. With `skip_diagonal` the diagonal predecessor is replaced by the
/// vertical one; that deliberately wrong recursion exists only so the oracle
/// suite can prove it detects a broken DP.
pub(crate) fn cumulative(x: &WarpingMatrix, radius: Option<usize>, skip_diagonal: bool) -> Vec<f64> {
    let (n, m) = (x.n, x.m);
    let mut d = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            if !in_band(i, j, n, m, radius) {
                continue;
            }
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { d[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { d[i * m + j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    if skip_diagonal {
                        up
                    } else {
                        d[(i - 1) * m + j - 1]
                    }
                } else {
                    f64::INFINITY
                };
                up.min(left).min(diag)
            };
            d[i * m + j] = x.get(i, j) + best;
        }
    }
    d
}

fn finish(x: &WarpingMatrix, radius: Option<usize>, d: &[f64]) -> Result<f64> {
    let total = d[x.n * x.m - 1];
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::Infeasible(format!(
            "band radius {radius:?} admits no path through a {}x{} matrix",
            x.n, x.m
        )))
    }
}

/// Minimal cumulative cost over all monotone contiguous paths.
pub fn dtw(x: &WarpingMatrix, params: &DtwParams) -> Result<f64> {
    let d = cumulative(x, params.band_radius, false);
    finish(x, params.band_radius, &d)
}

/// DTW between two raw series using the params' elementwise distance.
pub fn dtw_series(a: &[f64], b: &[f64], params: &DtwParams) -> Result<f64> {
    dtw(&pairwise_matrix(a, b, params.elementwise_mode)?, params)
}

/// DTW plus one optimal path. Backtracking prefers the diagonal predecessor,
/// then `(i-1, j)`, then `(i, j-1)`.
pub fn dtw_with_path(x: &WarpingMatrix, params: &DtwParams) -> Result<(f64, WarpingPath)> {
    let d = cumulative(x, params.band_radius, false);
    let total = finish(x, params.band_radius, &d)?;
    let m = x.m;
    let (mut i, mut j) = (x.n - 1, m - 1);
    let mut cells = vec![(i, j)];
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { d[(i - 1) * m + j - 1] } else { f64::INFINITY };
        let up = if i > 0 { d[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { d[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        cells.push((i, j));
    }
    cells.reverse();
    let path = WarpingPath(cells);
    debug_assert!(path.validate(x.n, x.m).is_ok());
    Ok((total, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(a: &[f64], b: &[f64]) -> WarpingMatrix {
        pairwise_matrix(a, b, ElementwiseMode::Abs).unwrap()
    }

    #[test]
    fn pairwise_matrix_hand_example() {
        let x = m(&[0.0, 0.0, 1.0], &[0.0, 1.0]);
        assert_eq!(x.values(), &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn pairwise_matrix_squared_mode() {
        let x = pairwise_matrix(&[0.0, 3.0], &[1.0], ElementwiseMode::Squared).unwrap();
        assert_eq!(x.values(), &[1.0, 4.0]);
    }

    #[test]
    fn pairwise_matrix_identical_series_has_zero_diagonal() {
        let a = [0.3, -1.0, 2.5, 7.0];
        let x = m(&a, &a);
        assert_eq!(x.diagonal_sum(), 0.0);
    }

    #[test]
    fn pairwise_matrix_is_transpose_symmetric() {
        let (a, b) = ([1.0, 4.0, -2.0], [0.5, 3.0]);
        assert_eq!(m(&a, &b), m(&b, &a).transpose());
    }

    #[test]
    fn empty_series_is_rejected() {
        assert!(pairwise_matrix(&[], &[1.0], ElementwiseMode::Abs).is_err());
    }

    #[test]
    fn hand_traced_dtw_and_path() {
        let x = m(&[0.0, 0.0, 1.0], &[0.0, 1.0]);
        assert_eq!(dtw(&x, &DtwParams::unconstrained()).unwrap(), 0.0);
        let (cost, path) = dtw_with_path(&x, &DtwParams::unconstrained()).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(path.cells(), &[(0, 0), (1, 0), (2, 1)]);
    }

    #[test]
    fn identical_series_give_zero_and_diagonal_path() {
        let a = [1.0, 5.0, 2.0, 2.0, 9.0];
        let (cost, path) = dtw_with_path(&m(&a, &a), &DtwParams::unconstrained()).unwrap();
        assert_eq!(cost, 0.0);
        let want: Vec<_> = (0..5).map(|i| (i, i)).collect();
        assert_eq!(path.cells(), want.as_slice());
    }

    #[test]
    fn radius_zero_is_diagonal_sum() {
        let x = m(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]);
        assert_eq!(dtw(&x, &DtwParams::banded(0)).unwrap(), x.diagonal_sum());
    }

    #[test]
    fn tight_band_on_unequal_lengths_is_infeasible() {
        let x = m(&[1.0, 2.0, 3.0], &[3.0, 1.0]);
        assert!(matches!(dtw(&x, &DtwParams::banded(0)), Err(Error::Infeasible(_))));
        assert!(dtw(&x, &DtwParams::banded(1)).is_ok());
    }

    #[test]
    fn single_cell() {
        assert_eq!(dtw(&m(&[2.0], &[5.0]), &DtwParams::unconstrained()).unwrap(), 3.0);
    }

    #[test]
    fn band_contains_stretched_diagonal() {
        // 4x8: cell (i, 2i) is on the stretched diagonal
        for i in 0..4 {
            assert!(in_band(i, 2 * i, 4, 8, Some(0)));
        }
        assert!(!in_band(1, 1, 4, 8, Some(0)));
    }

    #[test]
    fn path_validation_rejects_jumps() {
        let p = WarpingPath(vec![(0, 0), (2, 1)]);
        assert!(p.validate(3, 2).is_err());
        let p = WarpingPath(vec![(0, 0), (1, 1)]);
        assert!(p.validate(3, 2).is_err());
    }

    #[test]
    fn csv_export_has_one_line_per_row() {
        let x = m(&[0.0, 1.0], &[0.5, 2.0, 0.0]);
        let csv = x.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap(), "0.5,2,0");
    }
}
