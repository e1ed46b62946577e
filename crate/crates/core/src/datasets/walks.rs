use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::z_normalize;
use crate::error::{Error, Result};
use crate::warping::{dtw, pairwise_matrix, DtwParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSplit {
    Train,
    Val,
    Test,
}

impl PairSplit {
    fn stream_base(self) -> u64 {
        (self as u64) << 48
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfig {
    pub count: usize,
    pub length: usize,
    pub seed: u64,
    /// Emit `(a, a)` pairs instead of independent walks.
    #[serde(default)]
    pub identical: bool,
    /// Z-normalize each walk after generation.
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

impl WalkConfig {
    pub fn new(count: usize, length: usize, seed: u64) -> Self {
        Self {
            count,
            length,
            seed,
            identical: false,
            normalize: true,
        }
    }
}

/// Random-walk pairs with their DTW distances under one constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePairSet {
    pub config: WalkConfig,
    pub split: PairSplit,
    pub params: DtwParams,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

fn walk(rng: &mut ChaCha8Rng, length: usize, normalize: bool) -> Vec<f64> {
    let mut acc = 0.0;
    let raw: Vec<f64> = (0..length)
        .map(|_| {
            let step: f64 = StandardNormal.sample(rng);
            acc += step;
            acc
        })
        .collect();
    if normalize {
        z_normalize(&raw)
    } else {
        raw
    }
}

/// Pair `i` of a split is drawn from its own ChaCha stream of the master
/// seed, so any pair can be regenerated in isolation.
pub fn gen_random_walk_pairs(config: &WalkConfig, split: PairSplit, params: &DtwParams) -> Result<DistancePairSet> {
    if config.count == 0 || config.length == 0 {
        return Err(Error::Config("random-walk pairs need count >= 1 and length >= 1".into()));
    }
    let mut a = Vec::with_capacity(config.count);
    let mut b = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(split.stream_base() | i as u64);
        let first = walk(&mut rng, config.length, config.normalize);
        let second = if config.identical {
            first.clone()
        } else {
            walk(&mut rng, config.length, config.normalize)
        };
        a.push(first);
        b.push(second);
    }
    let mut set = DistancePairSet {
        config: *config,
        split,
        params: *params,
        a,
        b,
        targets: Vec::new(),
    };
    set.targets = set.compute_targets(params)?;
    Ok(set)
}

impl DistancePairSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn pair(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.a[i], &self.b[i])
    }

    fn compute_targets(&self, params: &DtwParams) -> Result<Vec<f64>> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| dtw(&pairwise_matrix(a, b, params.elementwise_mode)?, params))
            .collect()
    }

    /// Same series, targets recomputed under another constraint.
    pub fn with_params(&self, params: &DtwParams) -> Result<Self> {
        let mut out = self.clone();
        out.params = *params;
        out.targets = self.compute_targets(params)?;
        Ok(out)
    }

    /// Regenerates up to `sample` evenly spaced pairs from the stored seed and
    /// checks series and targets bit-for-bit.
    pub fn verify(&self, sample: usize) -> Result<()> {
        let n = self.len();
        let step = (n / sample.max(1)).max(1);
        for i in (0..n).step_by(step).take(sample) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(self.split.stream_base() | i as u64);
            let first = walk(&mut rng, self.config.length, self.config.normalize);
            let second = if self.config.identical {
                first.clone()
            } else {
                walk(&mut rng, self.config.length, self.config.normalize)
            };
            let target = dtw(&pairwise_matrix(&first, &second, self.params.elementwise_mode)?, &self.params)?;
            if first != self.a[i] || second != self.b[i] || target.to_bits() != self.targets[i].to_bits() {
                return Err(Error::Data(format!("pair {i} does not match its seed")));
            }
        }
        Ok(())
    }

    pub fn mean_target(&self) -> f64 {
        self.targets.iter().sum::<f64>() / self.len().max(1) as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a cached set and verifies a sample against its seed.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: Self = serde_json::from_str(&text)?;
        if set.a.len() != set.targets.len() || set.b.len() != set.targets.len() {
            return Err(Error::Data(format!("{}: pair and target counts differ", path.display())));
        }
        set.verify(16)?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_bit_identical() {
        let cfg = WalkConfig::new(20, 16, 3);
        let p = DtwParams::unconstrained();
        let x = gen_random_walk_pairs(&cfg, PairSplit::Train, &p).unwrap();
        let y = gen_random_walk_pairs(&cfg, PairSplit::Train, &p).unwrap();
        assert_eq!(x, y);
        x.verify(20).unwrap();
        let z = gen_random_walk_pairs(&cfg, PairSplit::Val, &p).unwrap();
        assert_ne!(x.a, z.a);
    }

    #[test]
    fn identical_pairs_have_zero_targets() {
        let cfg = WalkConfig {
            identical: true,
            ..WalkConfig::new(10, 12, 4)
        };
        let x = gen_random_walk_pairs(&cfg, PairSplit::Test, &DtwParams::banded(1)).unwrap();
        assert!(x.targets.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn band_targets_dominate_unconstrained() {
        let cfg = WalkConfig::new(50, 40, 5);
        let free = gen_random_walk_pairs(&cfg, PairSplit::Train, &DtwParams::unconstrained()).unwrap();
        let banded = free.with_params(&DtwParams::banded_fraction(0.05, 40)).unwrap();
        for (b, f) in banded.targets.iter().zip(&free.targets) {
            assert!(b >= f);
        }
        assert_eq!(banded.a, free.a);
    }

    #[test]
    fn tampered_cache_fails_verification() {
        let cfg = WalkConfig::new(8, 10, 6);
        let x = gen_random_walk_pairs(&cfg, PairSplit::Train, &DtwParams::unconstrained()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.json");
        x.save(&path).unwrap();
        assert_eq!(DistancePairSet::load(&path).unwrap(), x);
        let mut bad = x.clone();
        bad.targets[0] += 1e-12;
        bad.save(&path).unwrap();
        assert!(DistancePairSet::load(&path).is_err());
    }

    #[test]
    fn walks_are_normalized() {
        let x = gen_random_walk_pairs(&WalkConfig::new(3, 64, 7), PairSplit::Train, &DtwParams::unconstrained()).unwrap();
        let mean: f64 = x.a[0].iter().sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12);
    }
}
