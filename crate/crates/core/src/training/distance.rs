use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    apply_step, batch_sizes, divergence, write_best_checkpoint, write_epoch_checkpoint, Checkpoint, HeadKind,
    MetricsLog, TrainConfig, TrainOutcome,
};
use crate::datasets::DistancePairSet;
use crate::error::{Error, Result};
use crate::models::{DistanceModel, DistanceNet};
use crate::tensor::checkpoint::{StoreSnapshot, FORMAT_VERSION};
use crate::tensor::{AdamW, Mode, Tape};

/// Absolute-error summary over a pair set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceMetrics {
    pub count: usize,
    pub mae: f64,
    pub median_ae: f64,
    pub q1_ae: f64,
    pub q3_ae: f64,
    pub mse: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl DistanceMetrics {
    pub fn from_predictions(pred: &[f64], target: &[f64]) -> Result<Self> {
        if pred.is_empty() || pred.len() != target.len() {
            return Err(Error::Data("distance metrics need equal, non-empty prediction and target lists".into()));
        }
        let n = pred.len() as f64;
        let mut abs: Vec<f64> = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).collect();
        let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
        let mae = abs.iter().sum::<f64>() / n;
        abs.sort_by(f64::total_cmp);
        Ok(Self {
            count: pred.len(),
            mae,
            median_ae: quantile(&abs, 0.5),
            q1_ae: quantile(&abs, 0.25),
            q3_ae: quantile(&abs, 0.75),
            mse,
        })
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("mae", self.mae),
            ("median_ae", self.median_ae),
            ("q1_ae", self.q1_ae),
            ("q3_ae", self.q3_ae),
            ("mse", self.mse),
        ]
    }
}

/// Eval-mode predictions for every pair, in order.
pub fn predict_distances(model: &DistanceModel, data: &DistancePairSet, batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let pairs: Vec<(&[f64], &[f64])> = chunk.iter().map(|&i| data.pair(i)).collect();
        let mut tape = Tape::new(Mode::Eval);
        let d = model.predict(&mut tape, &pairs)?;
        out.extend_from_slice(tape.value(d).data());
    }
    Ok(out)
}

pub fn evaluate_distance(model: &DistanceModel, data: &DistancePairSet, batch: usize) -> Result<DistanceMetrics> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty pair set".into()));
    }
    let pred = predict_distances(model, data, batch)?;
    if let Some(i) = pred.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("prediction for pair {i} is {}", pred[i])));
    }
    DistanceMetrics::from_predictions(&pred, &data.targets)
}

fn checkpoint(model: &DistanceModel, epoch: usize, m: &DistanceMetrics, task: &str) -> Checkpoint {
    let metrics: BTreeMap<String, f64> = m.named().iter().map(|(k, v)| (format!("{task}/{k}"), *v)).collect();
    Checkpoint {
        format_version: FORMAT_VERSION,
        epoch,
        spec: model.spec.clone(),
        head: HeadKind::Distance {
            output_scale: model.output_scale,
            output_offset: model.output_offset,
        },
        metrics,
        selection_metric: m.mae,
        state: StoreSnapshot::capture(&model.store),
    }
}

/// Siamese distances are non-negative, so they are only scaled (by the mean
/// target); the 2D regressor's output is shifted by the mean and scaled by
/// the standard deviation.
fn set_output_units(model: &mut DistanceModel, targets: &[f64]) {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let std = (targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n).sqrt();
    let positive = |v: f64| if v > 0.0 && v.is_finite() { v } else { 1.0 };
    (model.output_offset, model.output_scale) = match model.net {
        DistanceNet::Siamese1d(_) => (0.0, positive(mean)),
        DistanceNet::ResNet2d(_) => (mean, positive(std)),
    };
}

/// MSE training on `train`; the returned best checkpoint minimises validation
/// MAE (earliest epoch wins ties; epoch 0 is the initialization). `task`
/// labels the metric rows.
pub fn train_distance(
    model: &mut DistanceModel,
    train: &DistancePairSet,
    val: &DistancePairSet,
    cfg: &TrainConfig,
    task: &str,
    log: &mut MetricsLog,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("distance training needs non-empty train and validation sets".into()));
    }
    if cfg.scale_targets {
        set_output_units(model, &train.targets);
    }
    let opt = AdamW::new(cfg.adamw())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = evaluate_distance(model, val, cfg.batch_size)?;
    for (k, v) in init.named() {
        log.push(0, task, "val", k, v);
    }
    let mut best = checkpoint(model, 0, &init, task);
    write_epoch_checkpoint(cfg, &best)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let sizes = batch_sizes(train.len(), cfg.batch_size);
    let mut loss_trace = Vec::with_capacity(cfg.num_epochs);
    let mut steps = 0;
    for epoch in 1..=cfg.num_epochs {
        order.shuffle(&mut rng);
        let mut offset = 0;
        let mut loss_sum = 0.0;
        for (b, &size) in sizes.iter().enumerate() {
            let idx = &order[offset..offset + size];
            offset += size;
            let pairs: Vec<(&[f64], &[f64])> = idx.iter().map(|&i| train.pair(i)).collect();
            let targets: Vec<f64> = idx.iter().map(|&i| train.targets[i]).collect();
            let mut tape = Tape::new(Mode::Train);
            let pred = model.predict(&mut tape, &pairs)?;
            let loss = tape.mse(pred, &targets).map_err(|e| divergence(epoch, b, e))?;
            loss_sum += tape.value(loss).item() * size as f64;
            apply_step(&mut tape, loss, &mut model.store, cfg, &opt).map_err(|e| divergence(epoch, b, e))?;
            steps += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        loss_trace.push(train_loss);
        log.push(epoch, task, "train", "mse", train_loss);
        let m = evaluate_distance(model, val, cfg.batch_size).map_err(|e| divergence(epoch, sizes.len(), e))?;
        for (k, v) in m.named() {
            log.push(epoch, task, "val", k, v);
        }
        log::info!("{task} epoch {epoch}: train mse {train_loss:.5}, val mae {:.5}", m.mae);
        let ck = checkpoint(model, epoch, &m, task);
        write_epoch_checkpoint(cfg, &ck)?;
        if m.mae < best.selection_metric {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_random_walk_pairs, PairSplit, WalkConfig};
    use crate::models::{Architecture, ModelSpec};
    use crate::warping::DtwParams;

    fn tiny_spec(arch: Architecture) -> ModelSpec {
        let mut spec = ModelSpec::new(arch);
        spec.resnet1d.channel_plan = vec![(1, 4), (4, 8)];
        spec.projection_dim = 8;
        spec.resnet2d.num_blocks = 2;
        spec.resnet2d.channel_plan = vec![4, 8];
        spec
    }

    fn pairs(count: usize, split: PairSplit) -> DistancePairSet {
        gen_random_walk_pairs(&WalkConfig::new(count, 16, 11), split, &DtwParams::unconstrained()).unwrap()
    }

    #[test]
    fn quartiles_interpolate() {
        let m = DistanceMetrics::from_predictions(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]).unwrap();
        assert_eq!(m.median_ae, 2.5);
        assert_eq!(m.q1_ae, 1.75);
        assert_eq!(m.q3_ae, 3.25);
        assert_eq!(m.mae, 2.5);
    }

    #[test]
    fn zero_epochs_return_the_initialization() {
        let mut model = DistanceModel::new(&tiny_spec(Architecture::Resnet2d), 1).unwrap();
        let cfg = TrainConfig {
            num_epochs: 0,
            ..TrainConfig::default()
        };
        let snapshot = StoreSnapshot::capture(&model.store);
        let out = train_distance(&mut model, &pairs(8, PairSplit::Train), &pairs(4, PairSplit::Val), &cfg, "d", &mut MetricsLog::default()).unwrap();
        assert_eq!(out.best.epoch, 0);
        assert_eq!(out.best.state, snapshot);
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn two_pairs_are_overfit() {
        let train = pairs(2, PairSplit::Train);
        for arch in [Architecture::Resnet1d, Architecture::Resnet2d] {
            let mut model = DistanceModel::new(&tiny_spec(arch), 2).unwrap();
            let cfg = TrainConfig {
                num_epochs: 300,
                learning_rate: 1e-3,
                ..TrainConfig::default()
            };
            let out = train_distance(&mut model, &train, &train, &cfg, "d", &mut MetricsLog::default()).unwrap();
            assert_eq!(out.optimizer_steps, 300);
            let last = *out.loss_trace.last().unwrap();
            assert!(last < 1e-2, "{arch}: final mse {last}");
            assert!(last < out.loss_trace[0]);
        }
    }

    #[test]
    fn same_seed_same_trace_and_checkpoint_reload_is_exact() {
        let (train, val) = (pairs(12, PairSplit::Train), pairs(6, PairSplit::Val));
        let cfg = TrainConfig {
            num_epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = DistanceModel::new(&tiny_spec(Architecture::Resnet1d), 3).unwrap();
            let mut log = MetricsLog::default();
            let out = train_distance(&mut model, &train, &val, &cfg, "d", &mut log).unwrap();
            (out, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(la.to_csv(), lb.to_csv());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.json");
        a.best.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, a.best);
        let model = loaded.distance_model().unwrap();
        let m = evaluate_distance(&model, &val, 4).unwrap();
        assert_eq!(m.mae.to_bits(), a.best.selection_metric.to_bits());
        assert!(loaded.classifier().is_err());
    }
}
