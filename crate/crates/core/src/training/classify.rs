use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    apply_step, divergence, write_best_checkpoint, write_epoch_checkpoint, Checkpoint, HeadKind, MetricsLog,
    MtlSchedule, TrainConfig, TrainOutcome,
};
use crate::datasets::{LabeledSeries, MtlGroup, TaskDataset};
use crate::error::{Error, Result};
use crate::models::{series_batch, Classifier};
use crate::tensor::checkpoint::{StoreSnapshot, FORMAT_VERSION};
use crate::tensor::{AdamW, Mode, ParamId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub count: usize,
    pub accuracy: f64,
    pub loss: f64,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode predicted labels of task `head`; ties go to the lowest class.
pub fn predict_labels(model: &Classifier, head: usize, data: &[LabeledSeries], batch: usize) -> Result<Vec<usize>> {
    Ok(eval_logits(model, head, data, batch)?.0)
}

fn eval_logits(model: &Classifier, head: usize, data: &[LabeledSeries], batch: usize) -> Result<(Vec<usize>, f64)> {
    let mut labels = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    for chunk in data.chunks(batch.max(1)) {
        let series: Vec<&[f64]> = chunk.iter().map(|s| s.values.as_slice()).collect();
        let truth: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let mut tape = Tape::new(Mode::Eval);
        let x = tape.leaf(series_batch(&series)?);
        let logits = model.logits(&mut tape, x, head)?;
        let width = tape.shape(logits)[1];
        labels.extend(tape.value(logits).data().chunks(width).map(argmax));
        let loss = tape.softmax_cross_entropy(logits, &truth)?;
        loss_sum += tape.value(loss).item() * chunk.len() as f64;
    }
    Ok((labels, loss_sum / data.len().max(1) as f64))
}

pub fn evaluate_task(model: &Classifier, head: usize, data: &[LabeledSeries], batch: usize) -> Result<ClassMetrics> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let (pred, loss) = eval_logits(model, head, data, batch)?;
    let correct = pred.iter().zip(data).filter(|(p, s)| **p == s.label).count();
    Ok(ClassMetrics {
        count: data.len(),
        accuracy: correct as f64 / data.len() as f64,
        loss,
    })
}

/// Shared trunk is exactly what each step touched besides its own head, and
/// all other heads stayed bit-identical.
struct SharingAudit {
    shared: BTreeSet<ParamId>,
    heads: Vec<Vec<ParamId>>,
}

impl SharingAudit {
    fn new(model: &Classifier) -> Self {
        Self {
            shared: model.shared_params().into_iter().collect(),
            heads: (0..model.heads.tasks.len()).map(|t| model.head_params(t)).collect(),
        }
    }

    fn snapshot(&self, model: &Classifier, except: usize) -> Vec<Tensor> {
        self.heads
            .iter()
            .enumerate()
            .filter(|(t, _)| *t != except)
            .flat_map(|(_, ids)| ids.iter().map(|&id| model.store.value(id).clone()))
            .collect()
    }

    fn check_tape(&self, tape: &Tape, head: usize) -> Result<()> {
        let used: BTreeSet<ParamId> = tape.param_vars().map(|(id, _)| id).collect();
        let mut want = self.shared.clone();
        want.extend(self.heads[head].iter().copied());
        if used != want {
            return Err(Error::Usage(format!(
                "hard-sharing audit failed: task #{head} touched {} parameters, expected {}",
                used.len(),
                want.len()
            )));
        }
        Ok(())
    }
}

fn checkpoint(model: &Classifier, epoch: usize, metrics: BTreeMap<String, f64>, mean_acc: f64) -> Checkpoint {
    Checkpoint {
        format_version: FORMAT_VERSION,
        epoch,
        spec: model.spec.clone(),
        head: HeadKind::Classifier {
            tasks: model
                .heads
                .tasks
                .iter()
                .map(|t| (t.name.clone(), t.num_classes))
                .collect(),
        },
        metrics,
        selection_metric: mean_acc,
        state: StoreSnapshot::capture(&model.store),
    }
}

fn validate_all(
    model: &Classifier,
    tasks: &[&TaskDataset],
    heads: &[usize],
    batch: usize,
    epoch: usize,
    log: &mut MetricsLog,
) -> Result<(BTreeMap<String, f64>, f64)> {
    let mut metrics = BTreeMap::new();
    let mut sum = 0.0;
    for (task, &head) in tasks.iter().zip(heads) {
        let m = evaluate_task(model, head, &task.val, batch)?;
        log.push(epoch, &task.name, "val", "accuracy", m.accuracy);
        log.push(epoch, &task.name, "val", "loss", m.loss);
        metrics.insert(format!("{}/accuracy", task.name), m.accuracy);
        metrics.insert(format!("{}/loss", task.name), m.loss);
        sum += m.accuracy;
    }
    let mean = sum / tasks.len() as f64;
    log.push(epoch, "all", "val", "mean_accuracy", mean);
    metrics.insert("all/mean_accuracy".into(), mean);
    Ok((metrics, mean))
}

fn train_tasks(model: &mut Classifier, tasks: &[&TaskDataset], cfg: &TrainConfig, log: &mut MetricsLog) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut heads = Vec::with_capacity(tasks.len());
    for t in tasks {
        let head = model.task_index(&t.name)?;
        if model.heads.tasks[head].num_classes != t.num_classes {
            return Err(Error::Config(format!(
                "head `{}` has {} classes, task has {}",
                t.name, model.heads.tasks[head].num_classes, t.num_classes
            )));
        }
        if t.train.is_empty() || t.val.is_empty() {
            return Err(Error::Data(format!("task `{}` has an empty train or validation split", t.name)));
        }
        heads.push(head);
    }
    let opt = AdamW::new(cfg.adamw())?;
    let audit = SharingAudit::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes: Vec<usize> = tasks.iter().map(|t| t.train.len()).collect();
    let mut schedule = MtlSchedule::new(&sizes, cfg.batch_size)?;
    let (metrics, mean) = validate_all(model, tasks, &heads, cfg.batch_size, 0, log)?;
    let mut best = checkpoint(model, 0, metrics, mean);
    write_epoch_checkpoint(cfg, &best)?;
    let mut loss_trace = Vec::with_capacity(cfg.num_epochs);
    let mut steps = 0;
    for epoch in 1..=cfg.num_epochs {
        let plan = schedule.epoch(&mut rng);
        let mut task_loss = vec![(0.0, 0usize); tasks.len()];
        for (b, batch) in plan.iter().enumerate() {
            let task = tasks[batch.task];
            let head = heads[batch.task];
            let series: Vec<&[f64]> = batch.indices.iter().map(|&i| task.train[i].values.as_slice()).collect();
            let labels: Vec<usize> = batch.indices.iter().map(|&i| task.train[i].label).collect();
            let others = audit.snapshot(model, head);
            let mut tape = Tape::new(Mode::Train);
            let x = tape.leaf(series_batch(&series)?);
            let logits = model.logits(&mut tape, x, head)?;
            audit.check_tape(&tape, head)?;
            let loss = tape
                .softmax_cross_entropy(logits, &labels)
                .map_err(|e| divergence(epoch, b, e))?;
            let entry = &mut task_loss[batch.task];
            entry.0 += tape.value(loss).item() * labels.len() as f64;
            entry.1 += labels.len();
            apply_step(&mut tape, loss, &mut model.store, cfg, &opt).map_err(|e| divergence(epoch, b, e))?;
            steps += 1;
            if audit.snapshot(model, head) != others {
                return Err(Error::Usage(format!("hard-sharing audit failed: a step on task #{head} moved another head")));
            }
        }
        let mut epoch_loss = 0.0;
        for (task, (sum, count)) in tasks.iter().zip(&task_loss) {
            let l = sum / (*count).max(1) as f64;
            log.push(epoch, &task.name, "train", "loss", l);
            epoch_loss += l;
        }
        loss_trace.push(epoch_loss / tasks.len() as f64);
        let (metrics, mean) = validate_all(model, tasks, &heads, cfg.batch_size, epoch, log)?;
        log::info!("epoch {epoch}: mean val accuracy {mean:.4}");
        let ck = checkpoint(model, epoch, metrics, mean);
        write_epoch_checkpoint(cfg, &ck)?;
        if mean > best.selection_metric {
            best = ck;
        }
    }
    write_best_checkpoint(cfg, &best)?;
    Ok(TrainOutcome {
        best,
        loss_trace,
        optimizer_steps: steps,
    })
}

/// Cross-entropy training of one task; the best checkpoint maximises
/// validation accuracy.
pub fn train_single_task(model: &mut Classifier, task: &TaskDataset, cfg: &TrainConfig, log: &mut MetricsLog) -> Result<TrainOutcome> {
    train_tasks(model, &[task], cfg, log)
}

/// Multitask training with one single-task mini-batch and optimizer step at
/// a time; the best checkpoint maximises mean validation accuracy.
pub fn train_mtl(model: &mut Classifier, group: &MtlGroup, cfg: &TrainConfig, log: &mut MetricsLog) -> Result<TrainOutcome> {
    let tasks: Vec<&TaskDataset> = group.tasks.iter().collect();
    if tasks.is_empty() {
        return Err(Error::Config(format!("group `{}` has no tasks", group.name)));
    }
    train_tasks(model, &tasks, cfg, log)
}
