//! Experiment configuration files and corpus preparation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::manifest::{filter_improvised, parse_manifest, Corpus};
use crate::data::synth::{generate_synthetic_corpus, SynthConfig, MANIFEST_NAME};
use crate::dsp::features::FeatureConfig;
use crate::dsp::store::{resolve_cache_dir, FeatureStore};
use crate::error::{Result, SerError};
use crate::eval::predict::PredictionMode;
use crate::eval::report::config_hash;
use crate::train::trainer::TrainConfig;

/// Everything needed to reproduce a cross-validation or sweep. Relative
/// paths are taken relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// JSON-lines manifest of a real corpus.
    pub manifest: Option<PathBuf>,
    /// Generates a synthetic corpus under `output_dir/corpus` when no
    /// manifest is given.
    pub synthetic: Option<SynthConfig>,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub validation_fraction: f64,
    pub prediction_mode: PredictionMode,
    pub improvised_only: bool,
    /// Test sessions to run, each in 1..=5.
    pub folds: Vec<u8>,
    /// Contrastive weights for `sweep-lambda`.
    pub lambda_grid: Vec<f64>,
    /// Also compute embedding separation on each test set.
    pub diagnostics: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: None,
            synthetic: None,
            output_dir: PathBuf::from("runs"),
            cache_dir: None,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            validation_fraction: 0.2,
            prediction_mode: PredictionMode::Average,
            improvised_only: true,
            folds: vec![1, 2, 3, 4, 5],
            lambda_grid: vec![0.0, 0.6, 0.7, 0.8, 0.9, 1.0],
            diagnostics: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.train.validate()?;
        if self.manifest.is_none() && self.synthetic.is_none() {
            return Err(SerError::InvalidArgument("set either manifest or synthetic".into()));
        }
        if self.folds.is_empty() || self.folds.iter().any(|f| !(1..=5).contains(f)) {
            return Err(SerError::InvalidArgument(format!("folds {:?} must be non-empty and in 1..=5", self.folds)));
        }
        if let Some(bad) = self.lambda_grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(SerError::InvalidArgument(format!("lambda {bad} not in [0, 1]")));
        }
        Ok(())
    }

    /// Hash of the settings that affect results. Paths are left out so a
    /// moved corpus or output directory keeps the same hash.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(map) = v.as_object_mut() {
            for k in ["manifest", "output_dir", "cache_dir"] {
                map.remove(k);
            }
        }
        config_hash(&v)
    }

    pub fn with_lambda(&self, lambda: f64) -> ExperimentConfig {
        let mut c = self.clone();
        c.train.loss.lambda = lambda;
        c
    }
}

/// Parses a config file. Call [`ExperimentConfig::validate`] after applying
/// any overrides; a file may leave the manifest to the command line.
pub fn load_experiment(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| SerError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads or synthesizes the corpus, applies the scenario filter and builds
/// the feature store.
pub fn prepare_corpus(cfg: &ExperimentConfig) -> Result<(Corpus, FeatureStore)> {
    let corpus = match (&cfg.manifest, &cfg.synthetic) {
        (Some(m), _) => parse_manifest(m)?,
        (None, Some(s)) => {
            let dir = cfg.output_dir.join("corpus");
            let manifest = dir.join(MANIFEST_NAME);
            if manifest.exists() {
                parse_manifest(&manifest)?
            } else {
                generate_synthetic_corpus(s, &dir)?
            }
        }
        (None, None) => return Err(SerError::InvalidArgument("set either manifest or synthetic".into())),
    };
    let corpus = if cfg.improvised_only {
        filter_improvised(&corpus)
    } else {
        corpus
    };
    let cache = resolve_cache_dir(cfg.cache_dir.as_deref());
    let store = FeatureStore::build(&corpus, &cfg.features, cache.as_deref())?;
    Ok((corpus, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_err());
        cfg.manifest = Some("m.jsonl".into());
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"lamda": 0.5}"#).is_err());
    }

    #[test]
    fn hash_ignores_paths() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.cache_dir = Some("c".into());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), a.with_lambda(0.8).hash().unwrap());
    }
}
