//! Waveform to frame-level feature matrices, normalization and caching.

pub mod cache;
pub mod features;
pub mod norm;
pub mod store;

pub use cache::{read_feature_cache, write_feature_cache};
pub use features::{
    extract_features, fix_length, frame_signal, hamming_window, hz_to_mel, mel_filterbank,
    mel_to_hz, segment_utterance, FeatureConfig, FeatureExtractor, FeatureKind, FeatureMatrix,
};
pub use norm::{apply_norm, compute_norm_stats, NormStats, STD_FLOOR};
pub use store::{resolve_cache_dir, FeatureStore, CACHE_ENV};
