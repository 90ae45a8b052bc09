//! In-memory feature store for a corpus, optionally backed by on-disk cache
//! files.
//!
//! Every utterance is cut into `t_fixed` segments; segment 0 is the
//! fixed-length view used for training. Values are rounded through `f32` so
//! features read back from the cache equal freshly extracted ones.

use std::collections::HashMap;
use std::env;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::manifest::Corpus;
use crate::data::wav::read_wav;
use crate::dsp::cache::{read_feature_cache, write_feature_cache};
use crate::dsp::features::{segment_utterance, FeatureConfig, FeatureExtractor, FeatureMatrix};
use crate::error::{Result, SerError};

pub const CACHE_ENV: &str = "SER_CACHE_DIR";

/// `SER_CACHE_DIR` when set and non-empty, otherwise `fallback`.
pub fn resolve_cache_dir(fallback: Option<&Path>) -> Option<PathBuf> {
    match env::var_os(CACHE_ENV) {
        Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
        _ => fallback.map(Path::to_path_buf),
    }
}

/// Short digest of the feature configuration; cache files live under it.
pub fn feature_config_key(cfg: &FeatureConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("feature config serializes");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn round_f32(mut fm: FeatureMatrix) -> FeatureMatrix {
    fm.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    fm
}

pub struct FeatureStore {
    cfg: FeatureConfig,
    segments: HashMap<String, Vec<FeatureMatrix>>,
}

impl FeatureStore {
    /// Extracts (or loads from `cache_dir`) the segment features of every
    /// record in `corpus`.
    pub fn build(corpus: &Corpus, cfg: &FeatureConfig, cache_dir: Option<&Path>) -> Result<FeatureStore> {
        cfg.validate()?;
        let extractor = FeatureExtractor::new(cfg.clone())?;
        let dir = cache_dir.map(|d| d.join(feature_config_key(cfg)));
        let entries = corpus
            .records
            .par_iter()
            .map(|r| {
                let wav = read_wav(&r.wav_path)?;
                let segs = segment_utterance(&wav, cfg.t_fixed);
                let feats = segs
                    .iter()
                    .enumerate()
                    .map(|(k, seg)| {
                        let path = dir.as_ref().map(|d| d.join(format!("{}.{k}.fcache", r.id)));
                        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
                            return read_feature_cache(p);
                        }
                        let fm = round_f32(extractor.extract(seg));
                        if let Some(p) = &path {
                            write_feature_cache(p, &fm)?;
                        }
                        Ok(fm)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((r.id.clone(), feats))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureStore {
            cfg: cfg.clone(),
            segments: entries.into_iter().collect(),
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self, id: &str) -> Result<&[FeatureMatrix]> {
        self.segments
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| SerError::InvalidArgument(format!("no features for utterance {id}")))
    }

    /// The fixed-length (first segment) features of `id`.
    pub fn primary(&self, id: &str) -> Result<&FeatureMatrix> {
        Ok(&self.segments(id)?[0])
    }
}
