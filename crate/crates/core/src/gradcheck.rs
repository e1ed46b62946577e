//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls forward passes, so it stays independent
//! of the backward kernels it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::tensor::{Mode, Padding, ParamStore, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`, or 0 when both
/// vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares back-propagated gradients of a scalar loss with central
/// differences. `build` receives one tape handle per input and must return a
/// scalar. Returns one relative error per input that requires a gradient.
pub fn check<F>(inputs: &[Tensor], mode: Mode, h: f64, build: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new(mode);
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new(mode);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut errors = Vec::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        if !input.requires_grad {
            continue;
        }
        let analytic = tape
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let mut numeric = vec![0.0; input.len()];
        for (idx, slot) in numeric.iter_mut().enumerate() {
            let orig = input.data()[idx];
            work[k].data_mut()[idx] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[idx] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[idx] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}

/// Result of one layer's sweep over random shapes.
#[derive(Debug, Clone)]
pub struct LayerReport {
    pub layer: &'static str,
    pub shapes: usize,
    pub max_relative_error: f64,
}

impl LayerReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < FD_TOLERANCE
    }
}

fn randn<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// Standard normal values pushed at least `margin` away from zero, so a
/// kink at zero is never straddled by the finite-difference step.
fn randn_away_from_zero<R: Rng>(rng: &mut R, shape: &[usize], margin: f64) -> Tensor {
    let mut t = randn(rng, shape);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin } + *v;
        }
    }
    t
}

/// Weighted sum `Σ y ⊙ r` with a fixed random `r`, turning any output into a
/// scalar whose gradient exercises the full Jacobian.
fn probe(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let r = tape.leaf(weights.clone().reshape(tape.shape(y).to_vec())?);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn sweep<F>(layer: &'static str, shapes: usize, mut case: F) -> Result<LayerReport>
where
    F: FnMut() -> Result<Vec<f64>>,
{
    let mut worst: f64 = 0.0;
    for _ in 0..shapes {
        for e in case()? {
            worst = worst.max(e);
        }
    }
    Ok(LayerReport {
        layer,
        shapes,
        max_relative_error: worst,
    })
}

/// Finite-difference sweep over every differentiable layer, `shapes` random
/// shapes each.
pub fn layer_suite(seed: u64, shapes: usize) -> Result<Vec<LayerReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let h = FD_STEP;
    let mut out = Vec::new();

    out.push(sweep("conv1d", shapes, || {
        let (b, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let k = rng.random_range(1..6);
        let len = rng.random_range(k.max(2)..10);
        let stride = rng.random_range(1..3);
        let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Explicit(rng.random_range(0..2)) };
        let x = randn(rng, &[b, cin, len]).with_grad();
        let w = randn(rng, &[cout, cin, k]).with_grad();
        let bias = randn(rng, &[cout]).with_grad();
        let pad = padding.amounts(len, k, stride);
        let out_len = crate::tensor::conv_out_len(len, k, stride, pad)?;
        let r = randn(rng, &[b * cout * out_len]);
        check(&[x, w, bias], Mode::Train, h, |t, v| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), stride, padding)?;
            probe(t, y, &r)
        })
    })?);

    out.push(sweep("conv2d", shapes, || {
        let (b, cin, cout) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..3));
        let k = [1, 3][rng.random_range(0..2)];
        let (hh, ww) = (rng.random_range(1..6), rng.random_range(1..6));
        let stride = rng.random_range(1..3);
        let x = randn(rng, &[b, cin, hh, ww]).with_grad();
        let w = randn(rng, &[cout, cin, k, k]).with_grad();
        let bias = randn(rng, &[cout]).with_grad();
        let oh = hh.div_ceil(stride);
        let ow = ww.div_ceil(stride);
        let r = randn(rng, &[b * cout * oh * ow]);
        check(&[x, w, bias], Mode::Train, h, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, Padding::Same)?;
            probe(t, y, &r)
        })
    })?);

    out.push(sweep("batchnorm", shapes, || {
        let (b, c) = (rng.random_range(2..4), rng.random_range(1..4));
        let spatial: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(1..4)).collect();
        let mut shape = vec![b, c];
        shape.extend(&spatial);
        let x = randn(rng, &shape).with_grad();
        let gamma = randn(rng, &[c]).with_grad();
        let beta = randn(rng, &[c]).with_grad();
        let r = randn(rng, &[x.len()]);
        let mut store = ParamStore::new();
        let rm = store.add_buffer("mean", Tensor::zeros([c]));
        let rv = store.add_buffer("var", Tensor::full([c], 1.0));
        let train = rng.random_bool(0.7);
        if !train {
            store.buffer_mut(rm).data_mut().copy_from_slice(randn(rng, &[c]).data());
            for v in store.buffer_mut(rv).data_mut() {
                *v = 0.5 + rng.random::<f64>();
            }
        }
        let mode = if train { Mode::Train } else { Mode::Eval };
        check(&[x, gamma, beta], mode, h, |t, v| {
            let y = t.batchnorm(v[0], v[1], v[2], rm, rv, &store)?;
            probe(t, y, &r)
        })
    })?);

    out.push(sweep("relu", shapes, || {
        let n = rng.random_range(1..12);
        let x = randn_away_from_zero(rng, &[n], 1e-3).with_grad();
        let r = randn(rng, &[n]);
        check(&[x], Mode::Train, h, |t, v| {
            let y = t.relu(v[0]);
            probe(t, y, &r)
        })
    })?);

    out.push(sweep("linear", shapes, || {
        let (b, i, o) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
        let x = randn(rng, &[b, i]).with_grad();
        let w = randn(rng, &[o, i]).with_grad();
        let bias = randn(rng, &[o]).with_grad();
        let r = randn(rng, &[b * o]);
        check(&[x, w, bias], Mode::Train, h, |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            probe(t, y, &r)
        })
    })?);

    out.push(sweep("global_avg_pool", shapes, || {
        let mut shape = vec![rng.random_range(1..3), rng.random_range(1..4)];
        for _ in 0..rng.random_range(1..3) {
            shape.push(rng.random_range(1..5));
        }
        let x = randn(rng, &shape).with_grad();
        let r = randn(rng, &[shape[0] * shape[1]]);
        check(&[x], Mode::Train, h, |t, v| {
            let y = t.global_avg_pool(v[0])?;
            probe(t, y, &r)
        })
    })?);

    out.push(sweep("l2_distance", shapes, || {
        let (b, d) = (rng.random_range(1..4), rng.random_range(1..6));
        let a = randn(rng, &[b, d]).with_grad();
        let c = randn(rng, &[b, d]).with_grad();
        let r = randn(rng, &[b]);
        check(&[a, c], Mode::Train, h, |t, v| {
            let y = t.l2_distance(v[0], v[1])?;
            probe(t, y, &r)
        })
    })?);

    out.push(sweep("mse", shapes, || {
        let n = rng.random_range(1..10);
        let p = randn(rng, &[n]).with_grad();
        let target = randn(rng, &[n]).into_data();
        check(&[p], Mode::Train, h, |t, v| t.mse(v[0], &target))
    })?);

    out.push(sweep("softmax_cross_entropy", shapes, || {
        let (b, c) = (rng.random_range(1..4), rng.random_range(2..6));
        let logits = randn(rng, &[b, c]).with_grad();
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        check(&[logits], Mode::Train, h, |t, v| t.softmax_cross_entropy(v[0], &labels))
    })?);

    out.push(sweep("template_distance_map", shapes, || {
        let (b, n, k, m) = (
            rng.random_range(1..3),
            rng.random_range(1..6),
            rng.random_range(1..4),
            rng.random_range(1..6),
        );
        let x = randn(rng, &[b, 1, n]).with_grad();
        let tpl = randn(rng, &[k, m]).with_grad();
        let r = randn(rng, &[b * k * n * m]);
        check(&[x, tpl], Mode::Train, h, |t, v| {
            let y = t.pairwise_abs(v[0], v[1])?;
            probe(t, y, &r)
        })
    })?);

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        let e = relative_error(&[1.0, 2.0], &[1.0, 2.0 + 1e-6]);
        assert!(e > 0.0 && e < 1e-6);
        assert!((relative_error(&[1000.0], &[1001.0]) - relative_error(&[1.0], &[1.001])).abs() < 1e-12);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // treat x -> x³ via mul(x, square(x)) and compare against a gradient that
        // the check computes itself; then break it by scaling inside build.
        let x = Tensor::from_vec(vec![0.7, -1.2]).with_grad();
        let ok = check(&[x.clone()], Mode::Train, FD_STEP, |t, v| {
            let s = t.square(v[0]);
            let c = t.mul(v[0], s)?;
            Ok(t.sum(c))
        })
        .unwrap();
        assert!(ok[0] < FD_TOLERANCE);
    }
}
