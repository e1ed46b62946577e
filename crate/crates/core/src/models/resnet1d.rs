use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvBn;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Channel plan and kernel sizes of the 1D residual trunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResNet1dSpec {
    /// `(in, out)` channels per block.
    pub channel_plan: Vec<(usize, usize)>,
    /// Kernel sizes of the three convolutions inside each block.
    pub kernel_sizes: [usize; 3],
}

impl Default for ResNet1dSpec {
    fn default() -> Self {
        Self {
            channel_plan: vec![(1, 64), (64, 128), (128, 128)],
            kernel_sizes: [8, 5, 3],
        }
    }
}

impl ResNet1dSpec {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.channel_plan.first() else {
            return Err(Error::Config("ResNet1D needs at least one block".into()));
        };
        if first.0 != 1 {
            return Err(Error::Config("ResNet1D input is univariate: first block must take 1 channel".into()));
        }
        for w in self.channel_plan.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::Config(format!(
                    "ResNet1D channel plan does not chain: {:?} -> {:?}",
                    w[0], w[1]
                )));
            }
        }
        if self.channel_plan.iter().any(|&(a, b)| a == 0 || b == 0) || self.kernel_sizes.contains(&0) {
            return Err(Error::Config("ResNet1D extents must be positive".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.channel_plan.last().map_or(0, |c| c.1)
    }

    pub fn min_length(&self) -> usize {
        self.kernel_sizes.iter().copied().max().unwrap_or(1)
    }
}

/// conv(k0)→bn→relu→conv(k1)→bn→relu→conv(k2)→bn, plus a skip path that is
/// the identity when channels agree and a 1-wide conv+bn otherwise; relu
/// after the sum.
#[derive(Debug, Clone)]
pub struct ResNet1dBlock {
    pub convs: [ConvBn; 3],
    pub skip: Option<ConvBn>,
    pub in_channels: usize,
}

impl ResNet1dBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, kernels: [usize; 3], rng: &mut R) -> Self {
        let convs = [
            ConvBn::new(store, &format!("{name}.conv0"), cin, cout, &[kernels[0]], 1, rng),
            ConvBn::new(store, &format!("{name}.conv1"), cout, cout, &[kernels[1]], 1, rng),
            ConvBn::new(store, &format!("{name}.conv2"), cout, cout, &[kernels[2]], 1, rng),
        ];
        let skip = (cin != cout).then(|| ConvBn::new(store, &format!("{name}.skip"), cin, cout, &[1], 1, rng));
        Self {
            convs,
            skip,
            in_channels: cin,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let c = tape.shape(x)[1];
        if c != self.in_channels {
            return Err(Error::Dimension(format!(
                "block expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let h = self.convs[0].forward(tape, store, x)?;
        let h = tape.relu(h);
        let h = self.convs[1].forward(tape, store, h)?;
        let h = tape.relu(h);
        let h = self.convs[2].forward(tape, store, h)?;
        let s = match &self.skip {
            Some(skip) => skip.forward(tape, store, x)?,
            None => x,
        };
        let y = tape.add(h, s)?;
        Ok(tape.relu(y))
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.convs
            .iter()
            .chain(self.skip.iter())
            .flat_map(ConvBn::params)
            .collect()
    }
}

/// Residual blocks followed by global average pooling over time.
#[derive(Debug, Clone)]
pub struct ResNet1d {
    pub spec: ResNet1dSpec,
    pub blocks: Vec<ResNet1dBlock>,
}

impl ResNet1d {
    pub fn new<R: Rng>(store: &mut ParamStore, spec: &ResNet1dSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let blocks = spec
            .channel_plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| ResNet1dBlock::new(store, &format!("trunk.block{i}"), cin, cout, spec.kernel_sizes, rng))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            blocks,
        })
    }

    /// `[batch, 1, n] → [batch, embedding_dim]`.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = *tape.shape(x).last().expect("3-d input");
        if n < self.spec.min_length() {
            return Err(Error::Config(format!(
                "series of length {n} is shorter than the largest kernel ({})",
                self.spec.min_length()
            )));
        }
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(tape, store, h)?;
        }
        tape.global_avg_pool(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(ResNet1dBlock::params).collect()
    }
}
