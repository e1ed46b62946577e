use crate::datasets::LabeledSeries;
use crate::error::{Error, Result};
use crate::warping::{dtw, pairwise_matrix, DtwParams};

/// Index of the training series nearest to `query` under DTW and its
/// distance; the earliest index wins ties.
pub fn nearest_neighbor(train: &[LabeledSeries], query: &[f64], params: &DtwParams) -> Result<(usize, f64)> {
    if train.is_empty() {
        return Err(Error::Data("1NN classifier needs at least one training series".into()));
    }
    let mut best = (0, f64::INFINITY);
    for (i, t) in train.iter().enumerate() {
        let d = dtw(&pairwise_matrix(query, &t.values, params.elementwise_mode)?, params)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// Label of the DTW-nearest training series.
pub fn onenn_dtw_classify(train: &[LabeledSeries], query: &[f64], params: &DtwParams) -> Result<usize> {
    Ok(train[nearest_neighbor(train, query, params)?.0].label)
}

/// Fraction of `test` labeled correctly by 1NN-DTW against `train`.
pub fn onenn_accuracy(train: &[LabeledSeries], test: &[LabeledSeries], params: &DtwParams) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Data("cannot score an empty split".into()));
    }
    let mut correct = 0;
    for q in test {
        if onenn_dtw_classify(train, &q.values, params)? == q.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}
