//! Utterance-level prediction from segment-level network outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::wav::Waveform;
use crate::dsp::features::{segment_utterance, FeatureConfig, FeatureExtractor, FeatureMatrix};
use crate::dsp::norm::{apply_norm, NormStats};
use crate::error::{Result, SerError};
use crate::nn::layers::argmax;
use crate::nn::model::ModelParams;
use crate::seed::{derive_seed, rng_for, stream};
use crate::train::data::for_each_eval_chunk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    /// Mean of all segment predictions.
    Average,
    /// One segment chosen at random.
    Crop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
    /// The chosen segment in crop mode.
    pub segment: Option<usize>,
}

/// Elementwise mean of segment probabilities and its argmax.
pub fn average_probs(per_segment: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let first = per_segment
        .first()
        .ok_or_else(|| SerError::InvalidArgument("no segments to average".into()))?;
    let mut mean = vec![0.0; first.len()];
    for p in per_segment {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
    }
    let n = per_segment.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let label = argmax(&mean);
    Ok((mean, label))
}

/// Uniform segment index for crop mode.
pub fn crop_index(n_segments: usize, seed: u64) -> usize {
    rng_for(seed, &[stream::CROP]).random_range(0..n_segments.max(1))
}

fn segment_probs(model: &ModelParams, segments: &[&FeatureMatrix], norm: &NormStats) -> Result<Vec<Vec<f64>>> {
    let inputs = segments
        .iter()
        .map(|f| Ok(apply_norm(f, norm)?.to_channel_major()))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let mut probs = Vec::with_capacity(segments.len());
    for_each_eval_chunk(model, &refs, |_, out| {
        probs.extend((0..out.batch).map(|i| out.probs.row(i).to_vec()));
        Ok(())
    })?;
    Ok(probs)
}

pub fn predict_average(model: &ModelParams, segments: &[FeatureMatrix], norm: &NormStats) -> Result<Prediction> {
    let probs = segment_probs(model, &segments.iter().collect::<Vec<_>>(), norm)?;
    let (probs, label) = average_probs(&probs)?;
    Ok(Prediction {
        probs,
        label,
        segment: None,
    })
}

pub fn predict_crop(model: &ModelParams, segments: &[FeatureMatrix], norm: &NormStats, seed: u64) -> Result<Prediction> {
    if segments.is_empty() {
        return Err(SerError::InvalidArgument("no segments to crop".into()));
    }
    let k = crop_index(segments.len(), seed);
    let probs = segment_probs(model, &[&segments[k]], norm)?.remove(0);
    let label = argmax(&probs);
    Ok(Prediction {
        probs,
        label,
        segment: Some(k),
    })
}

/// Segments and featurizes `w`, then predicts in `mode`.
pub fn predict_waveform(
    model: &ModelParams,
    w: &Waveform,
    norm: &NormStats,
    cfg: &FeatureConfig,
    mode: PredictionMode,
    seed: u64,
) -> Result<Prediction> {
    let ex = FeatureExtractor::new(cfg.clone())?;
    let segs: Vec<FeatureMatrix> = segment_utterance(w, cfg.t_fixed)
        .iter()
        .map(|s| {
            let mut fm = ex.extract(s);
            fm.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
            fm
        })
        .collect();
    match mode {
        PredictionMode::Average => predict_average(model, &segs, norm),
        PredictionMode::Crop => predict_crop(model, &segs, norm, seed),
    }
}

/// Predicts every utterance (given as its segment list) with all segments
/// batched together. Crop seeds are derived per utterance index.
pub fn predict_many(
    model: &ModelParams,
    utterances: &[&[FeatureMatrix]],
    norm: &NormStats,
    mode: PredictionMode,
    seed: u64,
) -> Result<Vec<Prediction>> {
    let mut flat: Vec<&FeatureMatrix> = Vec::new();
    let mut spans = Vec::with_capacity(utterances.len());
    for (u, segs) in utterances.iter().enumerate() {
        if segs.is_empty() {
            return Err(SerError::InvalidArgument(format!("utterance {u} has no segments")));
        }
        match mode {
            PredictionMode::Average => {
                spans.push((flat.len(), segs.len(), None));
                flat.extend(segs.iter());
            }
            PredictionMode::Crop => {
                let k = crop_index(segs.len(), derive_seed(seed, &[u as u64]));
                spans.push((flat.len(), 1, Some(k)));
                flat.push(&segs[k]);
            }
        }
    }
    let probs = segment_probs(model, &flat, norm)?;
    spans
        .into_iter()
        .map(|(start, n, segment)| {
            let (probs, label) = average_probs(&probs[start..start + n])?;
            Ok(Prediction { probs, label, segment })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::features::FeatureKind;
    use crate::nn::model::{init_params, ModelDims};
    use proptest::prelude::*;

    fn model_and_segments(n: usize) -> (ModelParams, Vec<FeatureMatrix>, NormStats) {
        let cfg = FeatureConfig {
            t_fixed: 1.0,
            ..FeatureConfig::default()
        };
        let m = init_params(1, &ModelDims::standard(13, cfg.n_frames())).unwrap();
        let segs = (0..n)
            .map(|k| FeatureMatrix {
                frames: 98,
                dim: 13,
                data: (0..98 * 13).map(|i| ((i * 31 + k * 7) % 17) as f64 / 8.0 - 1.0).collect(),
                valid_frames: 98,
                kind: FeatureKind::Mfcc13,
            })
            .collect();
        let norm = NormStats {
            mean: vec![0.0; 13],
            std: vec![1.0; 13],
        };
        (m, segs, norm)
    }

    #[test]
    fn average_examples() {
        let p = vec![0.6, 0.2, 0.1, 0.1];
        assert_eq!(average_probs(&[p.clone()]).unwrap(), (p.clone(), 0));
        assert_eq!(average_probs(&[p.clone(), p.clone()]).unwrap().0, p);
        let (mean, label) = average_probs(&[p, vec![0.2, 0.6, 0.1, 0.1]]).unwrap();
        for (a, b) in mean.iter().zip([0.4, 0.4, 0.1, 0.1]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(label, 0);
        assert!(average_probs(&[]).is_err());
    }

    #[test]
    fn crop_and_average_agree_on_single_segment() {
        let (m, segs, norm) = model_and_segments(1);
        let a = predict_average(&m, &segs, &norm).unwrap();
        let c = predict_crop(&m, &segs, &norm, 9).unwrap();
        assert_eq!(a.probs, c.probs);
        assert_eq!(c.segment, Some(0));
    }

    #[test]
    fn crop_is_seeded_and_in_range() {
        let (m, segs, norm) = model_and_segments(3);
        let a = predict_crop(&m, &segs, &norm, 4).unwrap();
        assert_eq!(a, predict_crop(&m, &segs, &norm, 4).unwrap());
        for seed in 0..50 {
            assert!(crop_index(3, seed) < 3);
        }
        let hits: std::collections::HashSet<usize> = (0..50).map(|s| crop_index(3, s)).collect();
        assert_eq!(hits.len(), 3);
    }

    #[test]
    fn batched_matches_single() {
        let (m, segs, norm) = model_and_segments(3);
        let utts: Vec<&[FeatureMatrix]> = vec![&segs[..1], &segs[..], &segs[1..]];
        let many = predict_many(&m, &utts, &norm, PredictionMode::Average, 0).unwrap();
        for (u, p) in utts.iter().zip(&many) {
            let single = predict_average(&m, u, &norm).unwrap();
            assert_eq!(single.label, p.label);
            for (a, b) in single.probs.iter().zip(&p.probs) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn waveform_prediction_uses_segments() {
        let (m, _, norm) = model_and_segments(1);
        let cfg = FeatureConfig {
            t_fixed: 1.0,
            ..FeatureConfig::default()
        };
        let w = Waveform::new((0..40_000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect());
        let p = predict_waveform(&m, &w, &norm, &cfg, PredictionMode::Crop, 1).unwrap();
        assert!(p.segment.unwrap() < 3);
        let a = predict_waveform(&m, &w, &norm, &cfg, PredictionMode::Average, 1).unwrap();
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn average_is_order_invariant(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 1..6)) {
            let segs: Vec<Vec<f64>> = raw.iter().map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            }).collect();
            let mut rev = segs.clone();
            rev.reverse();
            let (a, _) = average_probs(&segs).unwrap();
            let (b, _) = average_probs(&rev).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
