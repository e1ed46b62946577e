use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::ConvBn;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Layout of the 2D residual trunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResNet2dSpec {
    pub num_blocks: usize,
    /// Output channels of each block.
    pub channel_plan: Vec<usize>,
    /// Side of the square kernels inside blocks and of the downsampling conv.
    pub kernel: usize,
    /// Number of learnable templates for the classification variant.
    pub templates: usize,
    /// Length of each template.
    pub template_length: usize,
}

impl Default for ResNet2dSpec {
    fn default() -> Self {
        Self {
            num_blocks: 8,
            channel_plan: vec![32, 32, 64, 64, 128, 128, 256, 256],
            kernel: 3,
            templates: 64,
            template_length: 512,
        }
    }
}

impl ResNet2dSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.channel_plan.len() != self.num_blocks {
            return Err(Error::Config(format!(
                "ResNet2D has {} blocks but {} channel entries",
                self.num_blocks,
                self.channel_plan.len()
            )));
        }
        if self.channel_plan.contains(&0) || self.kernel == 0 {
            return Err(Error::Config("ResNet2D extents must be positive".into()));
        }
        if self.templates == 0 || self.template_length == 0 {
            return Err(Error::Config("template bank needs k >= 1 and m >= 1".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.channel_plan.last().expect("validated")
    }
}

/// Spatial extent after `blocks` stride-2 "same" downsamplings.
pub fn spatial_trace(mut extent: usize, blocks: usize) -> Vec<usize> {
    let mut trace = vec![extent];
    for _ in 0..blocks {
        extent = extent.div_ceil(2);
        trace.push(extent);
    }
    trace
}

/// conv→bn→relu→conv→bn plus identity (or 1×1 conv+bn) skip, relu after
/// the sum, then a stride-2 conv→bn→relu that halves both spatial axes.
#[derive(Debug, Clone)]
pub struct ResNet2dBlock {
    pub convs: [ConvBn; 2],
    pub skip: Option<ConvBn>,
    pub downsample: ConvBn,
    pub in_channels: usize,
}

impl ResNet2dBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        let convs = [
            ConvBn::new(store, &format!("{name}.conv0"), cin, cout, &[k, k], 1, rng),
            ConvBn::new(store, &format!("{name}.conv1"), cout, cout, &[k, k], 1, rng),
        ];
        let skip = (cin != cout).then(|| ConvBn::new(store, &format!("{name}.skip"), cin, cout, &[1, 1], 1, rng));
        let downsample = ConvBn::new(store, &format!("{name}.down"), cout, cout, &[k, k], 2, rng);
        Self {
            convs,
            skip,
            downsample,
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
        let s = match &self.skip {
            Some(skip) => skip.forward(tape, store, x)?,
            None => x,
        };
        let y = tape.add(h, s)?;
        let y = tape.relu(y);
        let d = self.downsample.forward(tape, store, y)?;
        Ok(tape.relu(d))
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.convs
            .iter()
            .chain(self.skip.iter())
            .chain(std::iter::once(&self.downsample))
            .flat_map(ConvBn::params)
            .collect()
    }
}

/// Blocks with downsampling, then global average pooling over both axes.
#[derive(Debug, Clone)]
pub struct ResNet2d {
    pub spec: ResNet2dSpec,
    pub blocks: Vec<ResNet2dBlock>,
}

impl ResNet2d {
    pub fn new<R: Rng>(store: &mut ParamStore, spec: &ResNet2dSpec, input_depth: usize, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut cin = input_depth;
        let mut blocks = Vec::with_capacity(spec.num_blocks);
        for (i, &cout) in spec.channel_plan.iter().enumerate() {
            blocks.push(ResNet2dBlock::new(store, &format!("trunk.block{i}"), cin, cout, spec.kernel, rng));
            cin = cout;
        }
        Ok(Self {
            spec: spec.clone(),
            blocks,
        })
    }

    /// `[batch, depth, n, m] → [batch, feature_dim]`.
    pub fn features(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(tape, store, h)?;
        }
        tape.global_avg_pool(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(ResNet2dBlock::params).collect()
    }
}
