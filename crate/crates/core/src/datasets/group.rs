use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_ucr_files, shape_task, split_60_20_20, ShapeTaskConfig, TaskDataset};
use crate::error::{Error, Result};

/// Where a task's series come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum TaskSource {
    /// UCR-format files (typically the archive's TRAIN and TEST files),
    /// merged before splitting.
    Ucr { name: String, files: Vec<PathBuf> },
    Synthetic(ShapeTaskConfig),
}

impl TaskSource {
    pub fn name(&self) -> &str {
        match self {
            TaskSource::Ucr { name, .. } => name,
            TaskSource::Synthetic(cfg) => &cfg.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    pub tasks: Vec<TaskSource>,
}

/// Tasks trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlGroup {
    pub name: String,
    pub tasks: Vec<TaskDataset>,
}

impl MtlGroup {
    /// `(name, num_classes)` per task, in group order.
    pub fn task_specs(&self) -> Vec<(String, usize)> {
        self.tasks.iter().map(|t| (t.name.clone(), t.num_classes)).collect()
    }
}

/// Loads, z-normalizes and splits every task. Relative UCR paths resolve
/// against `base_dir`; task `i` splits with `seed + i`.
pub fn build_group(config: &GroupConfig, base_dir: Option<&Path>, seed: u64) -> Result<MtlGroup> {
    if config.tasks.is_empty() {
        return Err(Error::Config(format!("group `{}` has no tasks", config.name)));
    }
    let mut names = BTreeSet::new();
    for t in &config.tasks {
        if !names.insert(t.name()) {
            return Err(Error::Config(format!(
                "group `{}` lists task `{}` twice",
                config.name,
                t.name()
            )));
        }
    }
    let mut tasks = Vec::with_capacity(config.tasks.len());
    for (i, source) in config.tasks.iter().enumerate() {
        let raw = match source {
            TaskSource::Ucr { name, files } => {
                if files.is_empty() {
                    return Err(Error::Config(format!("task `{name}` lists no files")));
                }
                let resolved: Vec<PathBuf> = files
                    .iter()
                    .map(|f| match base_dir {
                        Some(dir) if f.is_relative() => dir.join(f),
                        _ => f.clone(),
                    })
                    .collect();
                load_ucr_files(name, &resolved)?
            }
            TaskSource::Synthetic(cfg) => shape_task(cfg)?,
        };
        tasks.push(split_60_20_20(raw.normalized(), seed.wrapping_add(i as u64))?);
    }
    Ok(MtlGroup {
        name: config.name.clone(),
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(name: &str) -> TaskSource {
        TaskSource::Synthetic(ShapeTaskConfig::new(name, 40, 16, 1))
    }

    #[test]
    fn two_fixture_tasks() {
        let cfg = GroupConfig {
            name: "g".into(),
            tasks: vec![synthetic("a"), synthetic("b")],
        };
        let g = build_group(&cfg, None, 0).unwrap();
        assert_eq!(g.task_specs(), vec![("a".to_string(), 2), ("b".to_string(), 2)]);
        assert_eq!(g.tasks[0].train.len(), 24);
        let mean: f64 = g.tasks[0].train[0].values.iter().sum();
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn rejects_empty_duplicate_and_missing() {
        let empty = GroupConfig {
            name: "g".into(),
            tasks: vec![],
        };
        assert!(matches!(build_group(&empty, None, 0), Err(Error::Config(_))));
        let dup = GroupConfig {
            name: "g".into(),
            tasks: vec![synthetic("a"), synthetic("a")],
        };
        assert!(matches!(build_group(&dup, None, 0), Err(Error::Config(_))));
        let missing = GroupConfig {
            name: "g".into(),
            tasks: vec![TaskSource::Ucr {
                name: "x".into(),
                files: vec!["does/not/exist.tsv".into()],
            }],
        };
        assert!(matches!(build_group(&missing, None, 0), Err(Error::Io { .. })));
    }

    #[test]
    fn parses_from_toml() {
        let text = r#"
            name = "ecg"
            [[tasks]]
            source = "ucr"
            name = "ECG200"
            files = ["ECG200_TRAIN.tsv", "ECG200_TEST.tsv"]
            [[tasks]]
            source = "synthetic"
            name = "waves"
            count = 50
            length = 32
            seed = 3
        "#;
        let cfg: GroupConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.tasks.len(), 2);
        assert_eq!(cfg.tasks[1].name(), "waves");
    }
}
