//! Per-dimension z-normalization from training-fold statistics.

use serde::{Deserialize, Serialize};

use crate::dsp::features::FeatureMatrix;
use crate::error::{Result, SerError};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and population std over the valid (non-padded) frames of every
/// matrix, with std clamped below at [`STD_FLOOR`].
pub fn compute_norm_stats(train: &[&FeatureMatrix]) -> Result<NormStats> {
    let Some(first) = train.first() else {
        return Err(SerError::InvalidArgument("no training features".into()));
    };
    let dim = first.dim;
    if train.iter().any(|m| m.dim != dim) {
        return Err(SerError::Shape("feature dims differ across matrices".into()));
    }
    let n: usize = train.iter().map(|m| m.valid_frames).sum();
    if n < 2 {
        return Err(SerError::InvalidArgument(format!(
            "need at least 2 valid frames, have {n}"
        )));
    }
    let valid_rows = || {
        train
            .iter()
            .flat_map(|m| (0..m.valid_frames.min(m.frames)).map(move |i| m.row(i)))
    };
    let mut mean = vec![0.0; dim];
    for row in valid_rows() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in valid_rows() {
        for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let std = var
        .into_iter()
        .map(|s| (s / n as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

/// Maps every row, padded ones included, to `(row - mean) / std`.
pub fn apply_norm(fm: &FeatureMatrix, stats: &NormStats) -> Result<FeatureMatrix> {
    if stats.mean.len() != fm.dim || stats.std.len() != fm.dim {
        return Err(SerError::Shape(format!(
            "stats have {} dims, features have {}",
            stats.mean.len(),
            fm.dim
        )));
    }
    let mut out = fm.clone();
    for row in out.data.chunks_exact_mut(fm.dim) {
        for ((v, mu), sd) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - mu) / sd;
        }
    }
    Ok(out)
}
