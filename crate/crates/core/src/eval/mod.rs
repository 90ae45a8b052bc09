//! Prediction, metrics, separation diagnostics, cross-validation and
//! reporting.

pub mod cv;
pub mod experiment;
pub mod metrics;
pub mod predict;
pub mod report;
pub mod separation;

pub use crate::dsp::features::segment_utterance;
pub use cv::{
    cross_validate, evaluate_split, run_checkpoint, run_fold, run_seed, split_separation, stored_form, sweep_lambda, train_run,
    CvReport, TrainedRun, FoldSummary, RunSummary, SweepPoint, SweepReport,
};
pub use experiment::{load_experiment, prepare_corpus, ExperimentConfig};
pub use metrics::{unweighted_accuracy, weighted_accuracy, Confusion, N_CLASSES};
pub use predict::{average_probs, crop_index, predict_average, predict_crop, predict_many, predict_waveform, Prediction, PredictionMode};
pub use report::{canonical_json, config_hash, sha256_hex, write_canonical, EvalReport};
pub use separation::{embed_pos1, separation_diagnostics, SeparationDiagnostics};
