//! 1NN-DTW baseline, occlusion importance maps over pairwise matrices, and
//! average-rank tables.

mod onenn;
mod perturb;
mod rank;

pub use onenn::{nearest_neighbor, onenn_accuracy, onenn_dtw_classify};
pub use perturb::{perturbation_map, tube_mask, tube_ratio, ImportanceMap, MapMetadata};
pub use rank::{fractional_ranks, rank_table, reference_accuracies, RankTable, REFERENCE_METHODS};
