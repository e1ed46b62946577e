use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DistanceModel, DistanceNet};
use crate::tensor::{Mode, Tape, Tensor};
use crate::warping::{WarpingMatrix, WarpingPath};

/// Perturbed matrices evaluated per forward pass.
const PROBE_BATCH: usize = 64;

/// `|output(perturbed) − output(original)|` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub n: usize,
    pub m: usize,
    pub values: Vec<f64>,
    /// Model output on the unperturbed matrix.
    pub reference: f64,
    pub patch: usize,
}

/// Sidecar record written next to a map's CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub checkpoint: String,
    pub pair_id: usize,
    pub reference_output: f64,
    pub patch: usize,
    pub path: Vec<(usize, usize)>,
    pub tube_ratio: Option<f64>,
}

impl ImportanceMap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.m) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

/// Zeroes each `patch × patch` tile of `x` in turn (edge tiles are clipped)
/// and records the absolute change of the ResNet2D distance output; every
/// cell of a tile receives that tile's change.
pub fn perturbation_map(model: &DistanceModel, x: &WarpingMatrix, patch: usize) -> Result<ImportanceMap> {
    if !matches!(model.net, DistanceNet::ResNet2d(_)) {
        return Err(Error::Usage("perturbation maps need a ResNet2D distance model".into()));
    }
    let (n, m) = (x.rows(), x.cols());
    if patch == 0 || patch > n || patch > m {
        return Err(Error::Config(format!("patch size {patch} does not fit a {n}×{m} matrix")));
    }
    let base = x.values();
    let run = |batch: Vec<f64>, count: usize| -> Result<Vec<f64>> {
        let mut tape = Tape::new(Mode::Eval);
        let d = model.predict_matrices(&mut tape, Tensor::new(vec![count, 1, n, m], batch)?)?;
        Ok(tape.value(d).data().to_vec())
    };
    let reference = run(base.to_vec(), 1)?[0];
    let tiles: Vec<(usize, usize)> = (0..n)
        .step_by(patch)
        .flat_map(|i| (0..m).step_by(patch).map(move |j| (i, j)))
        .collect();
    let mut values = vec![0.0; n * m];
    for chunk in tiles.chunks(PROBE_BATCH) {
        let mut batch = Vec::with_capacity(chunk.len() * n * m);
        for &(ti, tj) in chunk {
            let start = batch.len();
            batch.extend_from_slice(base);
            for i in ti..(ti + patch).min(n) {
                batch[start + i * m + tj..start + i * m + (tj + patch).min(m)].fill(0.0);
            }
        }
        let out = run(batch, chunk.len())?;
        for (&(ti, tj), y) in chunk.iter().zip(out) {
            let delta = (y - reference).abs();
            for i in ti..(ti + patch).min(n) {
                values[i * m + tj..i * m + (tj + patch).min(m)].fill(delta);
            }
        }
    }
    Ok(ImportanceMap {
        n,
        m,
        values,
        reference,
        patch,
    })
}

/// Cells within Chebyshev distance `radius` of some path cell.
pub fn tube_mask(n: usize, m: usize, path: &WarpingPath, radius: usize) -> Vec<bool> {
    let mut mask = vec![false; n * m];
    for &(pi, pj) in path.cells() {
        for i in pi.saturating_sub(radius)..=(pi + radius).min(n - 1) {
            for j in pj.saturating_sub(radius)..=(pj + radius).min(m - 1) {
                mask[i * m + j] = true;
            }
        }
    }
    mask
}

/// Mean importance inside the tube divided by mean importance outside it.
/// `None` when the tube covers the whole matrix or nothing outside it is
/// important.
pub fn tube_ratio(map: &ImportanceMap, path: &WarpingPath, radius: usize) -> Option<f64> {
    let mask = tube_mask(map.n, map.m, path, radius);
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (v, &in_tube) in map.values.iter().zip(&mask) {
        if in_tube {
            inside += v;
            n_in += 1;
        } else {
            outside += v;
            n_out += 1;
        }
    }
    if n_out == 0 || n_in == 0 {
        return None;
    }
    let (mean_in, mean_out) = (inside / n_in as f64, outside / n_out as f64);
    if mean_out > 0.0 {
        Some(mean_in / mean_out)
    } else if mean_in > 0.0 {
        Some(f64::INFINITY)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, ModelSpec};
    use crate::warping::{dtw_with_path, pairwise_matrix, DtwParams, ElementwiseMode};

    fn model() -> DistanceModel {
        let mut spec = ModelSpec::new(Architecture::Resnet2d);
        spec.resnet2d.num_blocks = 2;
        spec.resnet2d.channel_plan = vec![3, 4];
        let mut model = DistanceModel::new(&spec, 1).unwrap();
        // the head starts at zero; give it weights so the output depends on x
        let DistanceNet::ResNet2d(net) = &model.net else { unreachable!() };
        let w = net.head.weight;
        for (k, v) in model.store.value_mut(w).data_mut().iter_mut().enumerate() {
            *v = 0.5 - 0.25 * k as f64;
        }
        model
    }

    fn matrix() -> WarpingMatrix {
        let a: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..7).map(|i| (i as f64 * 0.9).cos()).collect();
        pairwise_matrix(&a, &b, ElementwiseMode::Abs).unwrap()
    }

    #[test]
    fn constant_model_gives_zero_map() {
        let mut model = model();
        let DistanceNet::ResNet2d(net) = &model.net else { unreachable!() };
        let w = net.head.weight;
        model.store.value_mut(w).data_mut().fill(0.0);
        let map = perturbation_map(&model, &matrix(), 1).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn map_covers_matrix_and_is_nonnegative() {
        let x = matrix();
        for patch in [1, 2, 3] {
            let map = perturbation_map(&model(), &x, patch).unwrap();
            assert_eq!((map.n, map.m, map.values.len()), (9, 7, 63));
            assert!(map.values.iter().all(|&v| v >= 0.0));
            assert!(map.values.iter().any(|&v| v > 0.0));
        }
        assert!(perturbation_map(&model(), &x, 8).is_err());
    }

    #[test]
    fn pixel_entry_matches_a_direct_probe() {
        let model = model();
        let x = matrix();
        let map = perturbation_map(&model, &x, 1).unwrap();
        let mut v = x.values().to_vec();
        v[2 * 7 + 5] = 0.0;
        let mut tape = Tape::new(Mode::Eval);
        let d = model.predict_matrices(&mut tape, Tensor::new(vec![1, 1, 9, 7], v).unwrap()).unwrap();
        assert_eq!(map.get(2, 5), (tape.value(d).item() - map.reference).abs());
    }

    #[test]
    fn tube_covers_path_neighbourhood() {
        let x = matrix();
        let (_, path) = dtw_with_path(&x, &DtwParams::unconstrained()).unwrap();
        let mask = tube_mask(9, 7, &path, 0);
        assert_eq!(mask.iter().filter(|&&b| b).count(), path.len());
        let map = ImportanceMap {
            n: 9,
            m: 7,
            values: mask.iter().map(|&b| if b { 3.0 } else { 1.0 }).collect(),
            reference: 0.0,
            patch: 1,
        };
        assert_eq!(tube_ratio(&map, &path, 0), Some(3.0));
        assert_eq!(tube_ratio(&map, &path, 20), None);
    }
}
