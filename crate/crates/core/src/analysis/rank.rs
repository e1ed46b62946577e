use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Column order of [`reference_accuracies`].
pub const REFERENCE_METHODS: [&str; 5] = ["1NN-DTW", "ResNet1D", "ResNet2D", "ResNet1D w/ MTL", "ResNet2D w/ MTL"];

/// Published test accuracies of the five methods on 25 UCR tasks.
pub fn reference_accuracies() -> Vec<(&'static str, [f64; 5])> {
    vec![
        ("CricketX", [0.80, 0.75, 0.80, 0.75, 0.95]),
        ("CricketY", [0.78, 0.78, 0.71, 0.68, 0.76]),
        ("CricketZ", [0.78, 0.78, 0.77, 0.75, 0.94]),
        ("UWaveGestureLibraryAll", [0.91, 0.90, 0.98, 0.82, 0.97]),
        ("UWaveGestureLibraryX", [0.77, 0.83, 0.86, 0.79, 0.85]),
        ("UWaveGestureLibraryY", [0.64, 0.73, 0.76, 0.69, 0.80]),
        ("UWaveGestureLibraryZ", [0.70, 0.78, 0.77, 0.75, 0.78]),
        ("AllGestureWiimoteX", [0.81, 0.79, 0.76, 0.69, 0.74]),
        ("AllGestureWiimoteY", [0.89, 0.90, 0.77, 0.74, 0.81]),
        ("AllGestureWiimoteZ", [0.74, 0.70, 0.64, 0.66, 0.68]),
        ("DodgerLoopDay", [0.53, 0.41, 0.53, 0.41, 0.50]),
        ("DodgerLoopGame", [0.97, 0.88, 0.97, 0.97, 0.94]),
        ("DodgerLoopWeekend", [1.00, 1.00, 1.00, 0.97, 1.00]),
        ("SemgHandGenderCh2", [0.84, 0.84, 0.86, 0.92, 0.99]),
        ("SemgHandMovementCh2", [0.62, 0.49, 0.65, 0.58, 0.83]),
        ("SemgHandSubjectCh2", [0.77, 0.74, 0.89, 0.83, 0.98]),
        ("GestureMidAirD1", [0.59, 0.54, 0.62, 0.50, 0.57]),
        ("GestureMidAirD2", [0.60, 0.47, 0.56, 0.60, 0.63]),
        ("GestureMidAirD3", [0.34, 0.22, 0.24, 0.31, 0.35]),
        ("ECG200", [0.82, 0.93, 0.90, 0.88, 0.93]),
        ("ECG5000", [0.94, 0.95, 0.95, 0.94, 0.95]),
        ("ECGFiveDays", [0.99, 1.00, 1.00, 1.00, 1.00]),
        ("NonInvasiveFetalECGThorax1", [0.80, 0.94, 0.89, 0.90, 0.88]),
        ("NonInvasiveFetalECGThorax2", [0.87, 0.94, 0.93, 0.92, 0.93]),
        ("TwoLeadECG", [1.00, 1.00, 1.00, 1.00, 1.00]),
    ]
}

/// Rank 1 is the highest accuracy; tied values share the mean of the
/// positions they occupy.
pub fn fractional_ranks(scores: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::Data(format!("accuracy cell {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = shared;
        }
        start = end;
    }
    Ok(ranks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub tasks: Vec<String>,
    /// `accuracies[task][method]`.
    pub accuracies: Vec<Vec<f64>>,
    pub ranks: Vec<Vec<f64>>,
    pub average_ranks: Vec<f64>,
}

/// Per-task fractional ranks and their per-method means.
pub fn rank_table(methods: &[String], tasks: &[String], accuracies: &[Vec<f64>]) -> Result<RankTable> {
    if methods.is_empty() || tasks.is_empty() {
        return Err(Error::Data("rank table needs at least one method and one task".into()));
    }
    if accuracies.len() != tasks.len() {
        return Err(Error::Data(format!("{} task names for {} accuracy rows", tasks.len(), accuracies.len())));
    }
    let mut ranks = Vec::with_capacity(tasks.len());
    for (task, row) in tasks.iter().zip(accuracies) {
        if row.len() != methods.len() {
            return Err(Error::Data(format!(
                "task `{task}` has {} accuracies for {} methods",
                row.len(),
                methods.len()
            )));
        }
        ranks.push(fractional_ranks(row).map_err(|e| Error::Data(format!("task `{task}`: {e}")))?);
    }
    let average_ranks = (0..methods.len())
        .map(|k| ranks.iter().map(|r| r[k]).sum::<f64>() / tasks.len() as f64)
        .collect();
    Ok(RankTable {
        methods: methods.to_vec(),
        tasks: tasks.to_vec(),
        accuracies: accuracies.to_vec(),
        ranks,
        average_ranks,
    })
}

impl RankTable {
    /// `task,method,accuracy,rank` rows followed by `average,method,,rank`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,method,accuracy,rank\n");
        for ((task, acc), ranks) in self.tasks.iter().zip(&self.accuracies).zip(&self.ranks) {
            for ((method, a), r) in self.methods.iter().zip(acc).zip(ranks) {
                let _ = writeln!(out, "{task},{method},{a},{r}");
            }
        }
        for (method, r) in self.methods.iter().zip(&self.average_ranks) {
            let _ = writeln!(out, "average,{method},,{r}");
        }
        out
    }

    /// Aligned table, `accuracy (rank)` per cell, average ranks last.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .accuracies
            .iter()
            .zip(&self.ranks)
            .map(|(acc, rk)| acc.iter().zip(rk).map(|(a, r)| format!("{a:.2} ({r:.1})")).collect())
            .collect();
        let label_w = self.tasks.iter().map(String::len).chain([12]).max().unwrap_or(12);
        let col_w: Vec<usize> = self
            .methods
            .iter()
            .enumerate()
            .map(|(k, m)| cells.iter().map(|row| row[k].len()).chain([m.len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:label_w$}", "task");
        for (m, w) in self.methods.iter().zip(&col_w) {
            let _ = write!(out, "  {m:>w$}");
        }
        out.push('\n');
        for (task, row) in self.tasks.iter().zip(&cells) {
            let _ = write!(out, "{task:label_w$}");
            for (c, w) in row.iter().zip(&col_w) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:label_w$}", "average rank");
        for (r, w) in self.average_ranks.iter().zip(&col_w) {
            let _ = write!(out, "  {:>w$}", format!("{r:.2}"));
        }
        out.push('\n');
        out
    }
}
