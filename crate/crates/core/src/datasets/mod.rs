//! Random-walk distance pairs, UCR-format task loading, stratified 60/20/20
//! splits, z-normalization and multitask grouping.

mod group;
mod synthetic;
mod ucr;
mod walks;

pub use group::{build_group, GroupConfig, MtlGroup, TaskSource};
pub use synthetic::{shape_task, Shape, ShapeTaskConfig};
pub use ucr::{load_ucr_files, load_ucr_tsv};
pub use walks::{gen_random_walk_pairs, DistancePairSet, PairSplit, WalkConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero.
pub const ZNORM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    pub values: Vec<f64>,
    pub label: usize,
    pub source_id: String,
}

/// A labeled task before splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTask {
    pub name: String,
    pub num_classes: usize,
    pub series_length: usize,
    pub series: Vec<LabeledSeries>,
}

impl RawTask {
    pub fn normalized(mut self) -> Self {
        for s in &mut self.series {
            s.values = z_normalize(&s.values);
        }
        self
    }
}

/// One classification task with disjoint train/val/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub num_classes: usize,
    pub series_length: usize,
    pub train: Vec<LabeledSeries>,
    pub val: Vec<LabeledSeries>,
    pub test: Vec<LabeledSeries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &[LabeledSeries] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Zero mean, unit population standard deviation; near-constant series map
/// to zeros.
pub fn z_normalize(series: &[f64]) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ZNORM_EPSILON {
        return vec![0.0; series.len()];
    }
    series.iter().map(|v| (v - mean) / std).collect()
}

/// Per-class (train, val, test) sizes by largest remainder of 60/20/20;
/// ties in the remainder go to the earlier split.
pub fn split_counts(class_size: usize) -> [usize; 3] {
    let exact = [class_size * 3, class_size, class_size].map(|v| v as f64 / 5.0);
    let mut counts = exact.map(|v| v.floor() as usize);
    let mut left = class_size - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Stratified 60/20/20 split; every class needs at least five examples.
pub fn split_60_20_20(task: RawTask, seed: u64) -> Result<TaskDataset> {
    let mut by_class: Vec<Vec<LabeledSeries>> = vec![Vec::new(); task.num_classes];
    for s in task.series {
        if s.label >= task.num_classes {
            return Err(Error::Data(format!(
                "task `{}`: label {} outside 0..{}",
                task.name, s.label, task.num_classes
            )));
        }
        by_class[s.label].push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<LabeledSeries>; 3] = Default::default();
    for (label, mut members) in by_class.into_iter().enumerate() {
        if members.len() < 5 {
            return Err(Error::Data(format!(
                "task `{}`: class {label} has {} example(s); need at least 5 to fill three splits",
                task.name,
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let [tr, va, _] = split_counts(members.len());
        let mut rest = members.split_off(tr);
        let test = rest.split_off(va);
        parts[0].extend(members);
        parts[1].extend(rest);
        parts[2].extend(test);
    }
    for p in &mut parts {
        p.shuffle(&mut rng);
    }
    let [train, val, test] = parts;
    Ok(TaskDataset {
        name: task.name,
        num_classes: task.num_classes,
        series_length: task.series_length,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn raw(per_class: &[usize]) -> RawTask {
        let mut series = Vec::new();
        for (label, &count) in per_class.iter().enumerate() {
            for i in 0..count {
                series.push(LabeledSeries {
                    values: vec![label as f64, i as f64],
                    label,
                    source_id: format!("{label}-{i}"),
                });
            }
        }
        RawTask {
            name: "t".into(),
            num_classes: per_class.len(),
            series_length: 2,
            series,
        }
    }

    #[test]
    fn z_normalize_standardizes() {
        let z = z_normalize(&[1.0, 2.0, 3.0]);
        let mean: f64 = z.iter().sum::<f64>() / 3.0;
        let var: f64 = z.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.0).abs() < 1e-12);
        assert_eq!(z_normalize(&[4.0; 5]), vec![0.0; 5]);
        let again = z_normalize(&z);
        assert!(again.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn balanced_split_is_exact() {
        let d = split_60_20_20(raw(&[50, 50]), 1).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (60, 20, 20));
        for split in [&d.train, &d.val, &d.test] {
            let zeros = split.iter().filter(|s| s.label == 0).count();
            assert_eq!(zeros * 2, split.len());
        }
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let input = raw(&[7, 13, 9]);
        let ids: BTreeSet<_> = input.series.iter().map(|s| s.source_id.clone()).collect();
        let a = split_60_20_20(input.clone(), 5).unwrap();
        let b = split_60_20_20(input, 5).unwrap();
        assert_eq!(a, b);
        let mut seen = BTreeSet::new();
        for s in a.train.iter().chain(&a.val).chain(&a.test) {
            assert!(seen.insert(s.source_id.clone()));
        }
        assert_eq!(seen, ids);
    }

    #[test]
    fn largest_remainder_counts() {
        assert_eq!(split_counts(5), [3, 1, 1]);
        assert_eq!(split_counts(6), [4, 1, 1]);
        assert_eq!(split_counts(7), [4, 2, 1]);
        assert_eq!(split_counts(13), [8, 3, 2]);
        for n in 5..200 {
            let c = split_counts(n);
            assert_eq!(c.iter().sum::<usize>(), n);
            let exact = [0.6, 0.2, 0.2].map(|f| f * n as f64);
            for k in 0..3 {
                assert!((c[k] as f64 - exact[k]).abs() < 1.0);
            }
        }
    }

    #[test]
    fn tiny_class_is_rejected() {
        assert!(matches!(split_60_20_20(raw(&[10, 4]), 0), Err(Error::Data(_))));
    }
}
