//! Exhaustive path enumeration, used as an independent check of the DP.

use super::{in_band, pairwise_matrix, DtwParams};
use crate::error::{Error, Result};

/// Longest series the enumerator accepts; the path count grows like the
/// Delannoy numbers.
pub const BRUTE_FORCE_MAX_LEN: usize = 8;

/// Minimal path cost found by visiting every monotone contiguous path that
/// stays inside the band, skipping prefixes that already cost at least the
/// best complete path.
pub fn brute_force_dtw(a: &[f64], b: &[f64], params: &DtwParams) -> Result<f64> {
    if a.len() > BRUTE_FORCE_MAX_LEN || b.len() > BRUTE_FORCE_MAX_LEN {
        return Err(Error::Usage(format!(
            "brute force limited to length {BRUTE_FORCE_MAX_LEN}, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let x = pairwise_matrix(a, b, params.elementwise_mode)?;
    let (n, m) = (x.rows(), x.cols());
    let mut best = f64::INFINITY;
    // explicit stack of (i, j, cost so far including (i, j))
    let mut stack = vec![(0usize, 0usize, x.get(0, 0))];
    while let Some((i, j, cost)) = stack.pop() {
        // costs are non-negative, so a prefix already at `best` cannot win
        if cost >= best {
            continue;
        }
        if (i, j) == (n - 1, m - 1) {
            best = cost;
            continue;
        }
        // diagonal pushed last so it is explored first
        for (ni, nj) in [(i + 1, j), (i, j + 1), (i + 1, j + 1)] {
            if ni < n && nj < m && in_band(ni, nj, n, m, params.band_radius) {
                stack.push((ni, nj, cost + x.get(ni, nj)));
            }
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Infeasible(format!(
            "band radius {:?} admits no path",
            params.band_radius
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_series_cost_zero() {
        let a = [1.0, 2.0, 0.0, 1.0];
        assert_eq!(brute_force_dtw(&a, &a, &DtwParams::unconstrained()).unwrap(), 0.0);
    }

    #[test]
    fn single_element() {
        assert_eq!(brute_force_dtw(&[2.0], &[5.0], &DtwParams::unconstrained()).unwrap(), 3.0);
    }

    #[test]
    fn cap_is_enforced() {
        let long = [0.0; 9];
        assert!(matches!(
            brute_force_dtw(&long, &[0.0], &DtwParams::unconstrained()),
            Err(Error::Usage(_))
        ));
    }
}
