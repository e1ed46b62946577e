use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabeledSeries, RawTask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sine,
    Square,
    Sawtooth,
    Triangle,
}

impl Shape {
    /// One period over `phase ∈ [0, 1)`, range `[-1, 1]`.
    fn eval(self, phase: f64) -> f64 {
        let p = phase.rem_euclid(1.0);
        match self {
            Shape::Sine => (TAU * p).sin(),
            Shape::Square => {
                if p < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            Shape::Sawtooth => 2.0 * p - 1.0,
            Shape::Triangle => 1.0 - 4.0 * (p - 0.5).abs(),
        }
    }
}

/// Time-warped periodic prototypes with random phase, amplitude and noise;
/// class `c` uses `classes[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeTaskConfig {
    pub name: String,
    pub count: usize,
    pub length: usize,
    #[serde(default = "default_classes")]
    pub classes: Vec<Shape>,
    #[serde(default = "default_cycles")]
    pub cycles: f64,
    /// Maximum warp strength in `[0, 1)`; the time map stays monotone.
    #[serde(default = "default_warp")]
    pub warp: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_classes() -> Vec<Shape> {
    vec![Shape::Sine, Shape::Square]
}

fn default_cycles() -> f64 {
    2.0
}

fn default_warp() -> f64 {
    0.5
}

fn default_noise() -> f64 {
    0.1
}

impl ShapeTaskConfig {
    pub fn new(name: &str, count: usize, length: usize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            count,
            length,
            classes: default_classes(),
            cycles: default_cycles(),
            warp: default_warp(),
            noise: default_noise(),
            seed,
        }
    }
}

/// Balanced labels (`i mod C`); example `i` draws from its own stream.
pub fn shape_task(cfg: &ShapeTaskConfig) -> Result<RawTask> {
    if cfg.classes.len() < 2 || cfg.count == 0 || cfg.length < 2 {
        return Err(Error::Config(format!(
            "synthetic task `{}` needs >= 2 classes, count >= 1 and length >= 2",
            cfg.name
        )));
    }
    if !(0.0..1.0).contains(&cfg.warp) || cfg.noise < 0.0 || !cfg.noise.is_finite() || !(cfg.cycles > 0.0) {
        return Err(Error::Config(format!("synthetic task `{}` has invalid shape settings", cfg.name)));
    }
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let series = (0..cfg.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let label = i % cfg.classes.len();
            let shape = cfg.classes[label];
            let phase: f64 = rng.random();
            let strength = rng.random::<f64>() * cfg.warp;
            let warp_phase = rng.random::<f64>() * TAU;
            let amplitude = rng.random_range(0.8..1.2);
            let values = (0..cfg.length)
                .map(|k| {
                    let t = k as f64 / cfg.length as f64;
                    let u = t + strength * ((TAU * t + warp_phase).sin() - warp_phase.sin()) / TAU;
                    amplitude * shape.eval(cfg.cycles * u + phase) + noise.sample(&mut rng)
                })
                .collect();
            LabeledSeries {
                values,
                label,
                source_id: format!("{}:{i}", cfg.name),
            }
        })
        .collect();
    Ok(RawTask {
        name: cfg.name.clone(),
        num_classes: cfg.classes.len(),
        series_length: cfg.length,
        series,
    })
}
