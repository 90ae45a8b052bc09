//! Intra- versus inter-class cosine distance of embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SerError};
use crate::nn::model::ModelParams;
use crate::train::data::for_each_eval_chunk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationDiagnostics {
    /// Mean `1 - cos` over same-class pairs.
    pub mean_intra: f64,
    /// Mean `1 - cos` over cross-class pairs.
    pub mean_inter: f64,
    pub separation_ratio: f64,
}

/// Brute force over all unordered pairs. Zero vectors have cosine 0 with
/// everything.
pub fn separation_diagnostics(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<SeparationDiagnostics> {
    if embeddings.len() != labels.len() {
        return Err(SerError::Shape("embeddings and labels differ in length".into()));
    }
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if counts.len() < 2 || counts.values().any(|&c| c < 2) {
        return Err(SerError::InvalidArgument(
            "separation needs >= 2 classes with >= 2 samples each".into(),
        ));
    }
    let unit: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| {
            let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                vec![0.0; e.len()]
            } else {
                e.iter().map(|v| v / n).collect()
            }
        })
        .collect();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0u64, 0.0, 0u64);
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            let d = 1.0 - unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>();
            if labels[i] == labels[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    let (mean_intra, mean_inter) = (intra / n_intra as f64, inter / n_inter as f64);
    // Below roundoff the ratio is meaningless.
    if mean_inter <= f64::EPSILON {
        return Err(SerError::InvalidArgument("inter-class distance is zero".into()));
    }
    Ok(SeparationDiagnostics {
        mean_intra,
        mean_inter,
        separation_ratio: mean_intra / mean_inter,
    })
}

/// Eval-mode pooled-feature embeddings of channel-major inputs.
pub fn embed_pos1(model: &ModelParams, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for_each_eval_chunk(model, inputs, |_, f| {
        out.extend((0..f.batch).map(|i| f.pos1.row(i).to_vec()));
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_embeddings_have_zero_intra() {
        let e = vec![vec![1.0, 2.0]; 4];
        let d = separation_diagnostics(&e, &[0, 0, 1, 1]);
        // Identical vectors across classes leave no inter-class distance.
        assert!(d.is_err());
        let e = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![3.0, -1.0], vec![3.0, -1.0]];
        let d = separation_diagnostics(&e, &[0, 0, 1, 1]).unwrap();
        assert!(d.mean_intra.abs() < 1e-15);
    }

    #[test]
    fn orthogonal_classes() {
        let e = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![0.0, 3.0]];
        let d = separation_diagnostics(&e, &[0, 0, 1, 1]).unwrap();
        assert_eq!((d.mean_intra, d.mean_inter, d.separation_ratio), (0.0, 1.0, 0.0));
    }

    #[test]
    fn random_labels_give_ratio_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e: Vec<Vec<f64>> = (0..400).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..400).map(|_| rng.random_range(0..4)).collect();
        let d = separation_diagnostics(&e, &labels).unwrap();
        assert!((d.separation_ratio - 1.0).abs() < 0.05, "{d:?}");
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(separation_diagnostics(&[vec![1.0], vec![2.0]], &[0, 0]).is_err());
        assert!(separation_diagnostics(&[vec![1.0], vec![2.0], vec![1.0]], &[0, 0, 1]).is_err());
    }
}
