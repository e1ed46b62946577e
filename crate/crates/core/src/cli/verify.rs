//! Embedded oracle suite behind `warpnet verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{layer_suite, relative_error, FD_STEP, FD_TOLERANCE};
use crate::training::MtlSchedule;
use crate::warping::{
    brute_force_dtw, cumulative, dtw, pairwise_matrix, soft_dtw, soft_dtw_with_grad, DtwParams, ElementwiseMode,
    SoftDtwParams, WarpingMatrix,
};

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: &'static str,
    pub tolerance: String,
    pub cases: usize,
    /// Largest observed deviation, where meaningful.
    pub worst: f64,
    pub passed: bool,
    pub detail: String,
}

impl PropertyResult {
    pub fn line(&self) -> String {
        format!(
            "{} {:<28} tolerance {:<18} cases {:>7}  worst {:.3e}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.tolerance,
            self.cases,
            self.worst,
            if self.detail.is_empty() { String::new() } else { format!("  ({})", self.detail) }
        )
    }
}

fn dp_dtw(x: &WarpingMatrix, radius: Option<usize>, fault: bool) -> f64 {
    if fault {
        let d = cumulative(x, radius, true);
        d[x.rows() * x.cols() - 1]
    } else {
        dtw(x, &DtwParams { band_radius: radius, ..DtwParams::default() }).unwrap_or(f64::INFINITY)
    }
}

/// Every series over `alphabet` of each length in `lengths`.
pub fn all_series(alphabet: &[f64], lengths: std::ops::RangeInclusive<usize>) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for len in lengths {
        let total = alphabet.len().pow(len as u32);
        for mut code in 0..total {
            let mut s = Vec::with_capacity(len);
            for _ in 0..len {
                s.push(alphabet[code % alphabet.len()]);
                code /= alphabet.len();
            }
            out.push(s);
        }
    }
    out
}

pub fn dtw_oracle(max_len: usize, fault: bool) -> Result<PropertyResult> {
    let series = all_series(&[0.0, 1.0, 2.0], 1..=max_len);
    let (mut worst, mut cases, mut failures) = (0.0f64, 0, 0);
    for a in &series {
        for b in &series {
            let x = pairwise_matrix(a, b, ElementwiseMode::Abs)?;
            for radius in [None, Some(2), Some(1), Some(0)] {
                let p = DtwParams { band_radius: radius, ..DtwParams::default() };
                let Ok(expect) = brute_force_dtw(a, b, &p) else { continue };
                let got = dp_dtw(&x, radius, fault);
                let err = (got - expect).abs();
                cases += 1;
                if !(err <= 1e-9) {
                    failures += 1;
                }
                worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
            }
        }
    }
    Ok(PropertyResult {
        name: "dtw_vs_brute_force",
        tolerance: "abs 1e-9".into(),
        cases,
        worst,
        passed: failures == 0,
        detail: if failures > 0 { format!("{failures} mismatches") } else { String::new() },
    })
}

fn random_series(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()
}

pub fn diagonal_identity(rng: &mut ChaCha8Rng, count: usize, fault: bool) -> Result<PropertyResult> {
    let mut worst = 0.0f64;
    for _ in 0..count {
        let len = rng.random_range(1..40);
        let x = pairwise_matrix(&random_series(rng, len), &random_series(rng, len), ElementwiseMode::Abs)?;
        worst = worst.max((dp_dtw(&x, Some(0), fault) - x.diagonal_sum()).abs());
    }
    Ok(PropertyResult {
        name: "radius0_equals_diagonal_sum",
        tolerance: "abs 1e-9".into(),
        cases: count,
        worst,
        passed: worst <= 1e-9,
        detail: String::new(),
    })
}

pub fn soft_properties(rng: &mut ChaCha8Rng, count: usize) -> Result<Vec<PropertyResult>> {
    let (mut bound_violation, mut limit_worst, mut grad_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..count {
        let a = random_series(rng, 16);
        let b = random_series(rng, 16);
        let x = pairwise_matrix(&a, &b, ElementwiseMode::Abs)?;
        let hard = dtw(&x, &DtwParams::default())?;
        for gamma in [1e-2, 0.1, 1.0] {
            let s = soft_dtw(&x, &SoftDtwParams::new(gamma))?;
            bound_violation = bound_violation.max(s - hard);
        }
        let s = soft_dtw(&x, &SoftDtwParams::new(1e-4))?;
        limit_worst = limit_worst.max((s - hard).abs() / (1.0 + hard));
    }
    for _ in 0..count.min(20) {
        let (n, m) = (rng.random_range(1..7), rng.random_range(1..7));
        let x = WarpingMatrix::new(n, m, (0..n * m).map(|_| rng.random_range(0.0..2.0)).collect())?;
        let p = SoftDtwParams::new(rng.random_range(0.1..2.0));
        let (_, grad) = soft_dtw_with_grad(&x, &p)?;
        let mut numeric = vec![0.0; n * m];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let mut v = x.values().to_vec();
            v[k] += FD_STEP;
            let plus = soft_dtw(&WarpingMatrix::new(n, m, v.clone())?, &p)?;
            v[k] -= 2.0 * FD_STEP;
            let minus = soft_dtw(&WarpingMatrix::new(n, m, v)?, &p)?;
            *slot = (plus - minus) / (2.0 * FD_STEP);
        }
        grad_worst = grad_worst.max(relative_error(grad.values(), &numeric));
    }
    Ok(vec![
        PropertyResult {
            name: "soft_dtw_below_dtw",
            tolerance: "excess <= 0".into(),
            cases: count * 3,
            worst: bound_violation.max(0.0),
            passed: bound_violation <= 0.0,
            detail: String::new(),
        },
        PropertyResult {
            name: "soft_dtw_small_gamma_limit",
            tolerance: "rel 1e-2".into(),
            cases: count,
            worst: limit_worst,
            passed: limit_worst < 1e-2,
            detail: String::new(),
        },
        PropertyResult {
            name: "soft_dtw_gradient",
            tolerance: format!("rel {FD_TOLERANCE:e}"),
            cases: count.min(20),
            worst: grad_worst,
            passed: grad_worst < FD_TOLERANCE,
            detail: String::new(),
        },
    ])
}

/// Checks one schedule epoch against its invariants; returns the first
/// violation.
pub fn schedule_violation(sizes: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Option<String> {
    let mut s = MtlSchedule::new(sizes, batch).ok()?;
    let plan = s.epoch(rng);
    if plan.len() != s.n_iter * sizes.len() {
        return Some(format!("{} batches for n_iter {} and {} tasks", plan.len(), s.n_iter, sizes.len()));
    }
    for (it, chunk) in plan.chunks(sizes.len()).enumerate() {
        let mut seen: Vec<usize> = chunk.iter().map(|b| b.task).collect();
        seen.sort_unstable();
        if seen != (0..sizes.len()).collect::<Vec<_>>() {
            return Some(format!("iteration {it} does not visit each task once"));
        }
    }
    for (t, &n) in sizes.iter().enumerate() {
        let batches: Vec<&Vec<usize>> = plan.iter().filter(|b| b.task == t).map(|b| &b.indices).collect();
        if batches.iter().any(|b| b.is_empty() || b.len() > batch || b.iter().any(|&i| i >= n)) {
            return Some(format!("task {t} has an empty, oversized or out-of-range batch"));
        }
        // each completed pass is a permutation of the task's examples
        let n_d = s.n_d[t];
        for pass in batches.chunks(n_d) {
            if pass.len() < n_d {
                break;
            }
            let mut all: Vec<usize> = pass.iter().flat_map(|b| b.iter().copied()).collect();
            all.sort_unstable();
            if all != (0..n).collect::<Vec<_>>() {
                return Some(format!("task {t}: a pass is not a permutation"));
            }
        }
        if s.n_d[t] == s.n_iter && s.reshuffles[t] != 0 {
            return Some(format!("largest task {t} was reshuffled"));
        }
    }
    None
}

pub fn schedule_properties(rng: &mut ChaCha8Rng, shapes: usize) -> PropertyResult {
    let mut failures = Vec::new();
    for _ in 0..shapes {
        let tasks = rng.random_range(1..6);
        let sizes: Vec<usize> = (0..tasks).map(|_| rng.random_range(1..300)).collect();
        let batch = rng.random_range(1..64);
        if let Some(v) = schedule_violation(&sizes, batch, rng) {
            failures.push(format!("{sizes:?}/{batch}: {v}"));
        }
    }
    PropertyResult {
        name: "mtl_schedule_invariants",
        tolerance: "exact".into(),
        cases: shapes,
        worst: failures.len() as f64,
        passed: failures.is_empty(),
        detail: failures.into_iter().next().unwrap_or_default(),
    }
}

/// Runs every property. `inject_fault` swaps in a DP that never takes the
/// diagonal step so the oracle's ability to catch it can be demonstrated.
pub fn run_suite(inject_fault: bool) -> Result<Vec<PropertyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut out = vec![dtw_oracle(4, inject_fault)?, diagonal_identity(&mut rng, 200, inject_fault)?];
    out.extend(soft_properties(&mut rng, 50)?);
    for r in layer_suite(7, 3)? {
        let passed = r.passed();
        out.push(PropertyResult {
            name: r.layer,
            tolerance: format!("rel {FD_TOLERANCE:e}"),
            cases: r.shapes,
            worst: r.max_relative_error,
            passed,
            detail: "finite-difference gradient".into(),
        });
    }
    out.push(schedule_properties(&mut rng, 200));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerates_all_series() {
        assert_eq!(all_series(&[0.0, 1.0, 2.0], 1..=2).len(), 3 + 9);
    }

    #[test]
    fn fault_is_detected_only_when_injected() {
        assert!(dtw_oracle(3, false).unwrap().passed);
        assert!(!dtw_oracle(3, true).unwrap().passed);
    }
}
