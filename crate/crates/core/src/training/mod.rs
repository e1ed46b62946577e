//! Distance regression, single-task and multitask classification training,
//! evaluation, checkpoints and the per-epoch metrics log.

mod classify;
mod distance;
mod schedule;

pub use classify::{evaluate_task, predict_labels, train_mtl, train_single_task, ClassMetrics};
pub use distance::{evaluate_distance, predict_distances, train_distance, DistanceMetrics};
pub use schedule::{batch_sizes, num_batches, MtlSchedule, ScheduledBatch};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Classifier, DistanceModel, ModelSpec};
use crate::tensor::checkpoint::{StoreSnapshot, FORMAT_VERSION};
use crate::tensor::{clip_grad_norm, AdamW, AdamWConfig, ParamStore, Tape};

/// AdamW settings other than the learning rate, plus optional clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; off when absent.
    pub clip_grad_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = AdamWConfig::default();
        Self {
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            weight_decay: d.weight_decay,
            clip_grad_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// When set, `best.json` is written here at the end.
    pub checkpoint_dir: Option<PathBuf>,
    /// Also write every epoch's checkpoint as `epoch_NNNN.json`.
    pub save_every_epoch: bool,
    /// Scale distance outputs by the mean training target.
    pub scale_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 40,
            learning_rate: 1e-4,
            num_epochs: 200,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            checkpoint_dir: None,
            save_every_epoch: false,
            scale_targets: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.optimizer.clip_grad_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_grad_norm must be positive".into()));
            }
        }
        self.adamw().validate()
    }

    pub fn adamw(&self) -> AdamWConfig {
        let o = &self.optimizer;
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            weight_decay: o.weight_decay,
        }
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub task: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

/// Append-only metrics table with the frozen column set
/// `epoch,task,split,metric,value`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricRow>,
}

pub const METRICS_HEADER: &str = "epoch,task,split,metric,value";

impl MetricsLog {
    pub fn push(&mut self, epoch: usize, task: &str, split: &str, metric: &str, value: f64) {
        self.rows.push(MetricRow {
            epoch,
            task: task.to_string(),
            split: split.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.rows.extend(other.rows);
    }

    /// Values use shortest round-trip formatting, so equal runs give equal
    /// bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.task, r.split, r.metric, r.value);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Value series for one `(task, split, metric)`, in epoch order.
    pub fn series(&self, task: &str, split: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.task == task && r.split == split && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadKind {
    Distance {
        output_scale: f64,
        #[serde(default)]
        output_offset: f64,
    },
    Classifier { tasks: Vec<(String, usize)> },
}

/// Parameters, optimizer state and validation metrics at the end of an
/// epoch (epoch 0 is the initialization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub epoch: usize,
    pub spec: ModelSpec,
    pub head: HeadKind,
    /// Validation metrics keyed `task/metric`.
    pub metrics: BTreeMap<String, f64>,
    /// The value checkpoints are ranked by (lower MAE or higher accuracy).
    pub selection_metric: f64,
    pub state: StoreSnapshot,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}: checkpoint format version {} is not supported",
                path.display(),
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn distance_model(&self) -> Result<DistanceModel> {
        let HeadKind::Distance {
            output_scale,
            output_offset,
        } = self.head
        else {
            return Err(Error::Usage("checkpoint holds a classifier, not a distance model".into()));
        };
        let mut model = DistanceModel::new(&self.spec, 0)?;
        self.state.restore(&mut model.store)?;
        model.output_scale = output_scale;
        model.output_offset = output_offset;
        Ok(model)
    }

    pub fn classifier(&self) -> Result<Classifier> {
        let HeadKind::Classifier { tasks } = &self.head else {
            return Err(Error::Usage("checkpoint holds a distance model, not a classifier".into()));
        };
        let mut model = Classifier::new(&self.spec, tasks, 0)?;
        self.state.restore(&mut model.store)?;
        Ok(model)
    }
}

/// Best checkpoint plus the per-epoch training loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub loss_trace: Vec<f64>,
    pub optimizer_steps: usize,
}

/// Backward pass, gradient hand-off, running-stat commit, optional clipping
/// and one AdamW step.
fn apply_step(tape: &mut Tape, loss: crate::tensor::Var, store: &mut ParamStore, cfg: &TrainConfig, opt: &AdamW) -> Result<()> {
    tape.backward(loss)?;
    store.zero_grad();
    tape.write_param_grads(store)?;
    tape.commit_running_stats(store);
    if let Some(max) = cfg.optimizer.clip_grad_norm {
        clip_grad_norm(store, max);
    }
    opt.step(store)
}

fn divergence(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Divergence { epoch, batch, detail },
        other => other,
    }
}

fn write_epoch_checkpoint(cfg: &TrainConfig, ck: &Checkpoint) -> Result<()> {
    if let (Some(dir), true) = (&cfg.checkpoint_dir, cfg.save_every_epoch) {
        ck.save(&dir.join(format!("epoch_{:04}.json", ck.epoch)))?;
    }
    Ok(())
}

fn write_best_checkpoint(cfg: &TrainConfig, ck: &Checkpoint) -> Result<()> {
    if let Some(dir) = &cfg.checkpoint_dir {
        ck.save(&dir.join("best.json"))?;
    }
    Ok(())
}
