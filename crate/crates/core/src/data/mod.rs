//! Corpus ingestion: manifests, WAV audio, session folds and synthetic data.

pub mod folds;
pub mod manifest;
pub mod synth;
pub mod wav;

pub use folds::{make_session_folds, FoldSplit};
pub use manifest::{
    discretize_dimension, filter_improvised, parse_manifest, write_manifest, Corpus,
    DimensionClass, Emotion, Gender, Scenario, UtteranceRecord, SAMPLE_RATE,
};
pub use synth::{generate_synthetic_corpus, SynthConfig};
pub use wav::{read_wav, write_wav, Waveform};
