//! ResNet1D and ResNet2D trunks with their heads: Siamese distance
//! regression, 2D distance regression from a pairwise matrix, and per-task
//! classification heads over a shared trunk.

mod layers;
mod resnet1d;
mod resnet2d;

pub use layers::{BatchNorm, ConvBn, Dense};
pub use resnet1d::{ResNet1d, ResNet1dBlock, ResNet1dSpec};
pub use resnet2d::{spatial_trace, ResNet2d, ResNet2dBlock, ResNet2dSpec};

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::warping::{pairwise_matrix, ElementwiseMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Resnet1d,
    Resnet2d,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Resnet1d => "resnet1d",
            Architecture::Resnet2d => "resnet2d",
        })
    }
}

/// How templates are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateInit {
    /// Standard normal draws.
    #[default]
    Normal,
    /// Random training series, linearly resampled to the template length.
    Series,
}

/// Declarative description of a network; the head is chosen by the
/// experiment (distance regression or per-task classification).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Architecture,
    #[serde(default)]
    pub resnet1d: ResNet1dSpec,
    #[serde(default)]
    pub resnet2d: ResNet2dSpec,
    /// Width of the Siamese projection layer.
    #[serde(default = "default_projection")]
    pub projection_dim: usize,
    #[serde(default)]
    pub template_init: TemplateInit,
    /// Multiplier on the Kaiming draw of every convolution weight. Below 1
    /// the batch-normalised convs take larger effective steps.
    #[serde(default = "default_gain")]
    pub conv_init_gain: f64,
}

fn default_gain() -> f64 {
    1.0
}

/// Rescales every convolution kernel (rank 3 or more) in the store.
fn scale_conv_weights(store: &mut ParamStore, gain: f64) {
    if gain == 1.0 {
        return;
    }
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let w = store.value_mut(id);
        if w.shape().len() >= 3 {
            w.data_mut().iter_mut().for_each(|v| *v *= gain);
        }
    }
}

fn default_projection() -> usize {
    128
}

impl ModelSpec {
    pub fn new(arch: Architecture) -> Self {
        Self {
            arch,
            resnet1d: ResNet1dSpec::default(),
            resnet2d: ResNet2dSpec::default(),
            projection_dim: default_projection(),
            template_init: TemplateInit::Normal,
            conv_init_gain: default_gain(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.arch {
            Architecture::Resnet1d => self.resnet1d.validate()?,
            Architecture::Resnet2d => self.resnet2d.validate()?,
        }
        if self.projection_dim == 0 {
            return Err(Error::Config("projection_dim must be positive".into()));
        }
        if !(self.conv_init_gain.is_finite() && self.conv_init_gain > 0.0) {
            return Err(Error::Config("conv_init_gain must be positive".into()));
        }
        Ok(())
    }
}

/// Stacks equal-length series into `[batch, 1, n]`.
pub fn series_batch(series: &[&[f64]]) -> Result<Tensor> {
    let Some(first) = series.first() else {
        return Err(Error::Dimension("empty batch".into()));
    };
    let n = first.len();
    if let Some(bad) = series.iter().find(|s| s.len() != n) {
        return Err(Error::Dimension(format!(
            "series in one batch must share a length ({n} vs {})",
            bad.len()
        )));
    }
    let data = series.iter().flat_map(|s| s.iter().copied()).collect();
    Tensor::new(vec![series.len(), 1, n], data)
}

/// Absolute-difference pairwise matrices of each pair, `[batch, 1, n, m]`.
pub fn pair_matrix_batch(pairs: &[(&[f64], &[f64])]) -> Result<Tensor> {
    let Some(&(a0, b0)) = pairs.first() else {
        return Err(Error::Dimension("empty batch".into()));
    };
    let (n, m) = (a0.len(), b0.len());
    let mut data = Vec::with_capacity(pairs.len() * n * m);
    for (a, b) in pairs {
        if a.len() != n || b.len() != m {
            return Err(Error::Dimension("pairs in one batch must share lengths".into()));
        }
        data.extend(pairwise_matrix(a, b, ElementwiseMode::Abs)?.into_values());
    }
    Tensor::new(vec![pairs.len(), 1, n, m], data)
}

// ---------------------------------------------------------------------------
// distance models

/// Twin ResNet1D branches with shared weights, a linear projection, and the
/// Euclidean distance between the two projections.
#[derive(Debug, Clone)]
pub struct Siamese1d {
    pub trunk: ResNet1d,
    pub projection: Dense,
}

impl Siamese1d {
    pub fn new(store: &mut ParamStore, spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let trunk = ResNet1d::new(store, &spec.resnet1d, rng)?;
        let projection = Dense::new(store, "projection", spec.resnet1d.embedding_dim(), spec.projection_dim, rng);
        Ok(Self { trunk, projection })
    }

    fn branch(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let e = self.trunk.embed(tape, store, x)?;
        self.projection.forward(tape, store, e)
    }

    /// `a, b: [batch, 1, n]` → `[batch]`.
    pub fn distance(&self, tape: &mut Tape, store: &ParamStore, a: Var, b: Var) -> Result<Var> {
        if tape.shape(a)[0] != tape.shape(b)[0] {
            return Err(Error::Dimension(format!(
                "siamese batches differ: {} vs {}",
                tape.shape(a)[0],
                tape.shape(b)[0]
            )));
        }
        let ea = self.branch(tape, store, a)?;
        let eb = self.branch(tape, store, b)?;
        tape.l2_distance(ea, eb)
    }
}

/// ResNet2D over a single-channel pairwise matrix, pooled, then a linear map
/// to one scalar.
#[derive(Debug, Clone)]
pub struct ResNet2dDistance {
    pub trunk: ResNet2d,
    pub head: Dense,
}

impl ResNet2dDistance {
    pub fn new(store: &mut ParamStore, spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let trunk = ResNet2d::new(store, &spec.resnet2d, 1, rng)?;
        let head = Dense::new(store, "head", spec.resnet2d.feature_dim(), 1, rng);
        // zero weights: the first predictions equal the output offset
        store.value_mut(head.weight).data_mut().fill(0.0);
        Ok(Self { trunk, head })
    }

    /// `x: [batch, 1, n, m]` → `[batch]`.
    pub fn distance(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::Dimension(format!("expected [batch, 1, n, m], got {s:?}")));
        }
        let f = self.trunk.features(tape, store, x)?;
        let y = self.head.forward(tape, store, f)?;
        tape.reshape(y, &[s[0]])
    }
}

#[derive(Debug, Clone)]
pub enum DistanceNet {
    Siamese1d(Siamese1d),
    ResNet2d(ResNet2dDistance),
}

/// A distance regressor with its parameters.
///
/// Predictions are `output_offset + output_scale · network output`, with both
/// constants fixed from the training targets before training starts, so the
/// network itself works on unit-scale values.
#[derive(Debug, Clone)]
pub struct DistanceModel {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub net: DistanceNet,
    pub output_scale: f64,
    pub output_offset: f64,
}

impl DistanceModel {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = match spec.arch {
            Architecture::Resnet1d => DistanceNet::Siamese1d(Siamese1d::new(&mut store, spec, &mut rng)?),
            Architecture::Resnet2d => DistanceNet::ResNet2d(ResNet2dDistance::new(&mut store, spec, &mut rng)?),
        };
        scale_conv_weights(&mut store, spec.conv_init_gain);
        Ok(Self {
            spec: spec.clone(),
            store,
            net,
            output_scale: 1.0,
            output_offset: 0.0,
        })
    }

    /// Predicted distances for a batch of equal-shape pairs, `[batch]`.
    pub fn predict(&self, tape: &mut Tape, pairs: &[(&[f64], &[f64])]) -> Result<Var> {
        let raw = match &self.net {
            DistanceNet::Siamese1d(net) => {
                let a: Vec<&[f64]> = pairs.iter().map(|p| p.0).collect();
                let b: Vec<&[f64]> = pairs.iter().map(|p| p.1).collect();
                let a = tape.leaf(series_batch(&a)?);
                let b = tape.leaf(series_batch(&b)?);
                net.distance(tape, &self.store, a, b)?
            }
            DistanceNet::ResNet2d(net) => {
                let x = tape.leaf(pair_matrix_batch(pairs)?);
                net.distance(tape, &self.store, x)?
            }
        };
        self.to_target_units(tape, raw)
    }

    fn to_target_units(&self, tape: &mut Tape, raw: Var) -> Result<Var> {
        let y = tape.scale(raw, self.output_scale);
        if self.output_offset == 0.0 {
            return Ok(y);
        }
        let n = tape.shape(y)[0];
        let offset = tape.leaf(Tensor::full([n], self.output_offset));
        tape.add(y, offset)
    }

    /// Prediction directly from pairwise matrices (ResNet2D only).
    pub fn predict_matrices(&self, tape: &mut Tape, x: Tensor) -> Result<Var> {
        match &self.net {
            DistanceNet::ResNet2d(net) => {
                let x = tape.leaf(x);
                let raw = net.distance(tape, &self.store, x)?;
                self.to_target_units(tape, raw)
            }
            DistanceNet::Siamese1d(_) => Err(Error::Usage("the Siamese model takes series, not matrices".into())),
        }
    }
}

// ---------------------------------------------------------------------------
// classification

/// `k` learnable series of length `m`.
#[derive(Debug, Clone)]
pub struct TemplateBank {
    pub templates: ParamId,
    pub count: usize,
    pub length: usize,
}

impl TemplateBank {
    pub fn new(store: &mut ParamStore, count: usize, length: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if count == 0 || length == 0 {
            return Err(Error::Config("template bank needs k >= 1 and m >= 1".into()));
        }
        let data = (0..count * length).map(|_| StandardNormal.sample(rng)).collect();
        let templates = store.add("templates", Tensor::new(vec![count, length], data)?);
        Ok(Self {
            templates,
            count,
            length,
        })
    }

    /// Overwrites the templates with the given series, resampled to the
    /// template length, cycling through them if fewer than `k` are given.
    pub fn seed_from_series(&self, store: &mut ParamStore, series: &[&[f64]]) -> Result<()> {
        if series.is_empty() {
            return Err(Error::Data("no series to seed templates from".into()));
        }
        let m = self.length;
        let dst = store.value_mut(self.templates).data_mut();
        for c in 0..self.count {
            let s = series[c % series.len()];
            for j in 0..m {
                let pos = if m == 1 { 0.0 } else { j as f64 * (s.len() - 1) as f64 / (m - 1) as f64 };
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(s.len() - 1);
                let frac = pos - lo as f64;
                dst[c * m + j] = s[lo] * (1.0 - frac) + s[hi] * frac;
            }
        }
        Ok(())
    }

    /// `[batch, 1, n]` → `[batch, k, n, m]`; channel `c` is the pairwise
    /// matrix between each series and template `c`.
    pub fn distance_map(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let t = tape.param(store, self.templates);
        tape.pairwise_abs(x, t)
    }
}

#[derive(Debug, Clone)]
pub struct TaskHead {
    pub name: String,
    pub num_classes: usize,
    pub dense: Dense,
}

/// One independent linear head per task.
#[derive(Debug, Clone, Default)]
pub struct HeadSet {
    pub tasks: Vec<TaskHead>,
}

impl HeadSet {
    pub fn index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTask(name.to_string()))
    }
}

#[derive(Debug, Clone)]
pub enum Trunk {
    ResNet1d(ResNet1d),
    ResNet2d { bank: TemplateBank, net: ResNet2d },
}

/// Shared trunk (plus template bank for ResNet2D) with per-task heads.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub trunk: Trunk,
    pub heads: HeadSet,
}

impl Classifier {
    /// `tasks` lists `(name, num_classes)`; every task needs two classes or
    /// more and names must be unique.
    pub fn new(spec: &ModelSpec, tasks: &[(String, usize)], seed: u64) -> Result<Self> {
        spec.validate()?;
        if tasks.is_empty() {
            return Err(Error::Config("a classifier needs at least one task".into()));
        }
        let mut seen = BTreeSet::new();
        for (name, classes) in tasks {
            if *classes < 2 {
                return Err(Error::Config(format!("task `{name}` has {classes} class(es); need at least 2")));
            }
            if !seen.insert(name) {
                return Err(Error::Config(format!("duplicate task name `{name}`")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (trunk, dim) = match spec.arch {
            Architecture::Resnet1d => {
                let net = ResNet1d::new(&mut store, &spec.resnet1d, &mut rng)?;
                (Trunk::ResNet1d(net), spec.resnet1d.embedding_dim())
            }
            Architecture::Resnet2d => {
                let s = &spec.resnet2d;
                s.validate()?;
                let bank = TemplateBank::new(&mut store, s.templates, s.template_length, &mut rng)?;
                let net = ResNet2d::new(&mut store, s, s.templates, &mut rng)?;
                (Trunk::ResNet2d { bank, net }, s.feature_dim())
            }
        };
        let heads = HeadSet {
            tasks: tasks
                .iter()
                .map(|(name, classes)| TaskHead {
                    name: name.clone(),
                    num_classes: *classes,
                    dense: Dense::new(&mut store, &format!("head.{name}"), dim, *classes, &mut rng),
                })
                .collect(),
        };
        scale_conv_weights(&mut store, spec.conv_init_gain);
        Ok(Self {
            spec: spec.clone(),
            store,
            trunk,
            heads,
        })
    }

    /// Shared representation of `x: [batch, 1, n]`.
    pub fn representation(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match &self.trunk {
            Trunk::ResNet1d(net) => net.embed(tape, &self.store, x),
            Trunk::ResNet2d { bank, net } => {
                let maps = bank.distance_map(tape, &self.store, x)?;
                net.features(tape, &self.store, maps)
            }
        }
    }

    /// Logits of task `task` for `x: [batch, 1, n]`.
    pub fn logits(&self, tape: &mut Tape, x: Var, task: usize) -> Result<Var> {
        let head = self
            .heads
            .tasks
            .get(task)
            .ok_or_else(|| Error::UnknownTask(format!("#{task}")))?;
        let r = self.representation(tape, x)?;
        head.dense.forward(tape, &self.store, r)
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.heads.index(name)
    }

    /// Parameters shared by every task (trunk and templates).
    pub fn shared_params(&self) -> Vec<ParamId> {
        match &self.trunk {
            Trunk::ResNet1d(net) => net.params(),
            Trunk::ResNet2d { bank, net } => {
                let mut v = vec![bank.templates];
                v.extend(net.params());
                v
            }
        }
    }

    pub fn head_params(&self, task: usize) -> Vec<ParamId> {
        self.heads.tasks[task].dense.params().to_vec()
    }

    pub fn template_bank(&self) -> Option<&TemplateBank> {
        match &self.trunk {
            Trunk::ResNet2d { bank, .. } => Some(bank),
            Trunk::ResNet1d(_) => None,
        }
    }
}
