//! Operation recording and reverse-mode differentiation.

use std::collections::BTreeMap;

use super::conv::{ConvGeom, Padding};
use super::gemm::{gemm, Op as G};
use super::{norm, ops, BufferId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    GlobalAvgPool(Var),
    L2Distance(Var, Var),
    Mse {
        pred: Var,
        grad: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    PairwiseAbs {
        series: Var,
        templates: Var,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::L2Distance(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::GlobalAvgPool(a) => vec![*a],
            Op::Conv { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Mse { pred, .. } => vec![*pred],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::PairwiseAbs { series, templates } => vec![*series, *templates],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records differentiable operations in execution order. Every node's inputs
/// precede it, so a reverse sweep is a valid topological order.
#[derive(Debug)]
pub struct Tape {
    mode: Mode,
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
    running_updates: Vec<(BufferId, Vec<f64>)>,
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{what}: shapes {a:?} and {b:?} are incompatible"))
}

fn add_into(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            nodes: Vec::new(),
            params: BTreeMap::new(),
            running_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> Var {
        value.requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].value.requires_grad);
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places a parameter on the tape. Repeated requests for the same
    /// parameter return the same handle, so shared weights accumulate a single
    /// gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone().with_grad());
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Parameters placed on this tape, in id order.
    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(what, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.unary(a, |x| x * k);
        self.push(t, Op::Scale(a, k))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x * x);
        self.push(t, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    // ---- layers ---------------------------------------------------------

    /// `x: [batch, c_in, len]`, `w: [c_out, c_in, kernel]`, `b: [c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(shape_err("conv1d", &xs, &ws));
        }
        let pad = padding.amounts(xs[2], ws[2], stride.max(1));
        let geom = ConvGeom::new(xs[1], (1, xs[2]), ws[0], (1, ws[2]), (1, stride), (0, 0), pad)?;
        self.conv(x, w, b, geom, vec![xs[0], ws[0], geom.ow])
    }

    /// `x: [batch, c_in, h, w]`, `w: [c_out, c_in, kh, kw]`, `b: [c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(shape_err("conv2d", &xs, &ws));
        }
        let s = stride.max(1);
        let ph = padding.amounts(xs[2], ws[2], s);
        let pw = padding.amounts(xs[3], ws[3], s);
        let geom = ConvGeom::new(xs[1], (xs[2], xs[3]), ws[0], (ws[2], ws[3]), (stride, stride), ph, pw)?;
        self.conv(x, w, b, geom, vec![xs[0], ws[0], geom.oh, geom.ow])
    }

    fn conv(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom, out_shape: Vec<usize>) -> Result<Var> {
        if let Some(b) = b {
            if self.shape(b) != [geom.cout] {
                return Err(shape_err("conv bias", self.shape(b), &[geom.cout]));
            }
        }
        let batch = out_shape[0];
        let y = geom.forward(
            batch,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let t = Tensor::new(out_shape, y)?;
        Ok(self.push(t, Op::Conv { x, w, b, geom }))
    }

    /// Batch normalization over axis 1. In train mode batch statistics are
    /// used and the running estimates are queued for
    /// [`Tape::commit_running_stats`]; in eval mode the stored running
    /// statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: BufferId,
        running_var: BufferId,
        store: &ParamStore,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(shape_err("batchnorm", &xs, self.shape(gamma)));
        }
        let (batch, channels) = (xs[0], xs[1]);
        let plane: usize = xs[2..].iter().product();
        let (mean, var, batch_stats) = match self.mode {
            Mode::Train => {
                if batch < 2 {
                    return Err(Error::Config(
                        "batch normalization in train mode needs a batch of at least 2".into(),
                    ));
                }
                let st = norm::batch_stats(self.value(x).data(), batch, channels, plane);
                let rm = store.buffer(running_mean).data();
                let rv = store.buffer(running_var).data();
                let new_mean = rm
                    .iter()
                    .zip(&st.mean)
                    .map(|(r, m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m)
                    .collect();
                let new_var = rv
                    .iter()
                    .zip(&st.var_unbiased)
                    .map(|(r, v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v)
                    .collect();
                self.running_updates.push((running_mean, new_mean));
                self.running_updates.push((running_var, new_var));
                (st.mean, st.var, true)
            }
            Mode::Eval => (
                store.buffer(running_mean).data().to_vec(),
                store.buffer(running_var).data().to_vec(),
                false,
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let (y, xhat) = norm::normalize(
            self.value(x).data(),
            batch,
            channels,
            plane,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let t = Tensor::new(xs, y)?;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        ))
    }

    /// `x: [batch, in]`, `w: [out, in]`, `b: [out]` → `x·wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err("linear", &xs, &ws));
        }
        let (batch, inp, out) = (xs[0], xs[1], ws[0]);
        let mut y = vec![0.0; batch * out];
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(shape_err("linear bias", self.shape(b), &[out]));
            }
            let bias = self.value(b).data();
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(batch, inp, out, self.value(x).data(), G::N, self.value(w).data(), G::T, 1.0, &mut y);
        let t = Tensor::new(vec![batch, out], y)?;
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    /// Mean over every axis after the channel axis: `[b, c, ...] → [b, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            return Err(Error::Dimension(format!("global_avg_pool needs a spatial axis, got {xs:?}")));
        }
        let plane: usize = xs[2..].iter().product();
        let y = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let t = Tensor::new(vec![xs[0], xs[1]], y)?;
        Ok(self.push(t, Op::GlobalAvgPool(x)))
    }

    /// Row-wise Euclidean distance `[batch, d] × [batch, d] → [batch]`.
    pub fn l2_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb || sa.len() != 2 {
            return Err(shape_err("l2_distance", &sa, &sb));
        }
        let d = sa[1];
        let y = self
            .value(a)
            .data()
            .chunks(d)
            .zip(self.value(b).data().chunks(d))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .collect();
        let t = Tensor::new(vec![sa[0]], y)?;
        Ok(self.push(t, Op::L2Distance(a, b)))
    }

    /// Mean squared error against a constant target of the same length.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(Error::Dimension(format!(
                "mse: {} predictions for {} targets",
                p.len(),
                target.len()
            )));
        }
        let (loss, grad) = ops::mse(p.data(), target);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("mse loss is {loss}")));
        }
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, grad }))
    }

    /// Mean softmax cross-entropy of `logits: [batch, classes]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "cross entropy: logits {s:?} for {} labels",
                labels.len()
            )));
        }
        let (loss, probs) = ops::cross_entropy(self.value(logits).data(), s[1], labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("cross-entropy loss is {loss}")));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Absolute-difference distance map between each series and each
    /// template: `series: [batch, 1, n]`, `templates: [k, m]` →
    /// `[batch, k, n, m]`.
    pub fn pairwise_abs(&mut self, series: Var, templates: Var) -> Result<Var> {
        let (ss, ts) = (self.shape(series).to_vec(), self.shape(templates).to_vec());
        if ss.len() != 3 || ss[1] != 1 || ts.len() != 2 {
            return Err(shape_err("pairwise_abs", &ss, &ts));
        }
        let (batch, n, k, m) = (ss[0], ss[2], ts[0], ts[1]);
        let x = self.value(series).data();
        let tpl = self.value(templates).data();
        let mut y = Vec::with_capacity(batch * k * n * m);
        for b in 0..batch {
            let xb = &x[b * n..(b + 1) * n];
            for c in 0..k {
                let tc = &tpl[c * m..(c + 1) * m];
                for &xi in xb {
                    y.extend(tc.iter().map(|tj| (xi - tj).abs()));
                }
            }
        }
        let t = Tensor::new(vec![batch, k, n, m], y)?;
        Ok(self.push(t, Op::PairwiseAbs { series, templates }))
    }

    // ---- differentiation ------------------------------------------------

    /// Back-propagates from a scalar `loss`, adding d(loss)/d(node) into the
    /// gradient slot of every node that requires a gradient. Calling it again
    /// accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            add_into(&mut self.nodes[i].value.grad, g);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut send = |v: Var, d: Vec<f64>| {
            if self.wants(v) {
                add_into(&mut grads[v.0], d);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                send(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, k) => send(*a, g.iter().map(|v| v * k).collect()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                send(*a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect());
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            Op::Mean(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Conv { x, w, b, geom } => {
                let batch = self.shape(*x)[0];
                let mut dw = self.wants(*w).then(|| vec![0.0; self.value(*w).len()]);
                let mut db = b.filter(|b| self.wants(*b)).map(|_| vec![0.0; geom.cout]);
                let dx = geom.backward(
                    batch,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                    self.wants(*x),
                );
                if let Some(dx) = dx {
                    send(*x, dx);
                }
                if let Some(dw) = dw {
                    send(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    send(*b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xs = self.shape(*x);
                let (batch, channels) = (xs[0], xs[1]);
                let plane: usize = xs[2..].iter().product();
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                let backward = if *batch_stats {
                    norm::backward_train
                } else {
                    norm::backward_eval
                };
                let dx = backward(
                    g,
                    xhat,
                    batch,
                    channels,
                    plane,
                    self.value(*gamma).data(),
                    inv_std,
                    &mut dgamma,
                    &mut dbeta,
                );
                send(*x, dx);
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::Linear { x, w, b } => {
                let (batch, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let out = self.shape(*w)[0];
                if self.wants(*x) {
                    let mut dx = vec![0.0; batch * inp];
                    gemm(batch, out, inp, g, G::N, self.value(*w).data(), G::N, 0.0, &mut dx);
                    send(*x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; out * inp];
                    gemm(out, batch, inp, g, G::T, self.value(*x).data(), G::N, 0.0, &mut dw);
                    send(*w, dw);
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; out];
                    for row in g.chunks(out) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    send(*b, db);
                }
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let plane: usize = xs[2..].iter().product();
                let mut dx = Vec::with_capacity(plane * g.len());
                for &gv in g {
                    dx.extend(std::iter::repeat_n(gv / plane as f64, plane));
                }
                send(*x, dx);
            }
            Op::L2Distance(a, b) => {
                let d = self.shape(*a)[1];
                let dist = node.value.data();
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let mut da = vec![0.0; va.len()];
                for (r, (&gv, &dr)) in g.iter().zip(dist).enumerate() {
                    if dr > 0.0 {
                        for k in r * d..(r + 1) * d {
                            da[k] = gv * (va[k] - vb[k]) / dr;
                        }
                    }
                }
                let db = da.iter().map(|v| -v).collect();
                send(*a, da);
                send(*b, db);
            }
            Op::Mse { pred, grad } => send(*pred, grad.iter().map(|v| v * g[0]).collect()),
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / labels.len() as f64;
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * classes + l] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                send(*logits, d);
            }
            Op::PairwiseAbs { series, templates } => {
                let ss = self.shape(*series);
                let ts = self.shape(*templates);
                let (batch, n, k, m) = (ss[0], ss[2], ts[0], ts[1]);
                let x = self.value(*series).data();
                let tpl = self.value(*templates).data();
                let mut dx = self.wants(*series).then(|| vec![0.0; x.len()]);
                let mut dt = self.wants(*templates).then(|| vec![0.0; tpl.len()]);
                let mut idx = 0;
                for b in 0..batch {
                    for c in 0..k {
                        for i in 0..n {
                            let xi = x[b * n + i];
                            for j in 0..m {
                                let diff = xi - tpl[c * m + j];
                                let s = if diff > 0.0 {
                                    g[idx]
                                } else if diff < 0.0 {
                                    -g[idx]
                                } else {
                                    0.0
                                };
                                if let Some(dx) = dx.as_mut() {
                                    dx[b * n + i] += s;
                                }
                                if let Some(dt) = dt.as_mut() {
                                    dt[c * m + j] -= s;
                                }
                                idx += 1;
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    send(*series, dx);
                }
                if let Some(dt) = dt {
                    send(*templates, dt);
                }
            }
        }
        Ok(())
    }

    /// Adds the gradients of every parameter placed on this tape into the
    /// store.
    pub fn write_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for (id, v) in self.param_vars() {
            if let Some(g) = self.grad(v) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    /// Applies queued running-statistics updates (train mode batchnorm).
    pub fn commit_running_stats(&mut self, store: &mut ParamStore) {
        for (id, values) in self.running_updates.drain(..) {
            store.buffer_mut(id).data_mut().copy_from_slice(&values);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.leaf(Tensor::new([2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap().with_grad());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient_at_three_is_six() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.leaf(Tensor::scalar(3.0).with_grad());
        let y = tape.square(x);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.leaf(Tensor::scalar(3.0).with_grad());
        let h = tape.scale(x, 2.0);
        let y = tape.square(h);
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        // d(4x²)/dx = 8x = 24, twice
        assert_eq!(tape.grad(x).unwrap(), &[48.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_usage_error() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.leaf(Tensor::zeros([2]).with_grad());
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn inputs_without_grad_receive_none() {
        let mut tape = Tape::new(Mode::Train);
        let x = tape.leaf(Tensor::scalar(2.0));
        let w = tape.leaf(Tensor::scalar(5.0).with_grad());
        let y = tape.mul(x, w).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.grad(w).unwrap(), &[2.0]);
    }

    #[test]
    fn shared_parameter_uses_one_node() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.5));
        let mut tape = Tape::new(Mode::Train);
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
        let y = tape.mul(a, b).unwrap();
        tape.backward(y).unwrap();
        tape.write_param_grads(&mut store).unwrap();
        assert_eq!(store.value(id).grad.as_deref().unwrap(), &[3.0]);
    }
}
