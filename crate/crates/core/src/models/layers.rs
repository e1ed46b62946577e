use rand::Rng;

use crate::error::Result;
use crate::tensor::{BufferId, ParamId, ParamStore, Padding, Tape, Tensor, Var};

/// Batch normalization with learnable affine and running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full([channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros([channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full([channels], 1.0)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.batchnorm(x, g, b, self.running_mean, self.running_var, store)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }
}

/// Convolution followed by batch normalization (activation left to caller).
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub weight: ParamId,
    pub bias: ParamId,
    pub bn: BatchNorm,
    pub stride: usize,
    two_d: bool,
}

impl ConvBn {
    /// `kernel` has one entry per spatial axis (1 for 1D, 2 for 2D).
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: &[usize],
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let mut shape = vec![cout, cin];
        shape.extend(kernel);
        let fan_in = cin * kernel.iter().product::<usize>();
        let weight = store.add_kaiming(format!("{name}.weight"), &shape, fan_in, rng);
        Self {
            weight,
            bias: store.add(format!("{name}.bias"), Tensor::zeros([cout])),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
            stride,
            two_d: kernel.len() == 2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = if self.two_d {
            tape.conv2d(x, w, Some(b), self.stride, Padding::Same)?
        } else {
            tape.conv1d(x, w, Some(b), self.stride, Padding::Same)?
        };
        self.bn.forward(tape, store, y)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = vec![self.weight, self.bias];
        v.extend(self.bn.params());
        v
    }
}

/// Affine map `x·Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add_kaiming(format!("{name}.weight"), &[out, inp], inp, rng),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, Some(b))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}
