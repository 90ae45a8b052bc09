//! Leave-one-session-out cross-validation and the contrastive weight sweep.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::folds::{make_session_folds, FoldSplit};
use crate::data::manifest::Corpus;
use crate::dsp::features::FeatureMatrix;
use crate::dsp::norm::{apply_norm, NormStats};
use crate::dsp::store::FeatureStore;
use crate::error::{Result, SerError};
use crate::eval::experiment::ExperimentConfig;
use crate::eval::metrics::{unweighted_accuracy, weighted_accuracy, Confusion};
use crate::eval::predict::{predict_many, PredictionMode};
use crate::eval::report::{write_canonical, EvalReport};
use crate::eval::separation::{embed_pos1, separation_diagnostics, SeparationDiagnostics};
use crate::nn::checkpoint::{decode_checkpoint, encode_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
use crate::nn::model::ModelParams;
use crate::seed::{derive_seed, stream};
use crate::train::data::FoldData;
use crate::train::trainer::{train, EpochRecord, RunResult};

/// Seed of run `run` in fold `fold`.
pub fn run_seed(master: u64, fold: u8, run: usize) -> u64 {
    derive_seed(master, &[stream::RUN, fold as u64, run as u64])
}

/// Checkpoint of a finished run.
pub fn run_checkpoint(run: &RunResult, data: &FoldData) -> Checkpoint {
    Checkpoint {
        header: CheckpointHeader {
            dims: run.params.dims.clone(),
            feature_config: Some(data.feature_config.clone()),
            norm: Some(run.norm.clone()),
            seed: run.seed,
            epoch: run.best_epoch,
        },
        params: run.params.clone(),
    }
}

/// The checkpoint as it reads back from disk, so in-process scores match
/// scores of the saved file.
pub fn stored_form(ck: &Checkpoint) -> Result<Checkpoint> {
    decode_checkpoint(&encode_checkpoint(ck)?)
}

/// Confusion of utterance-level predictions on `ids`.
pub fn evaluate_split(
    model: &ModelParams,
    norm: &NormStats,
    corpus: &Corpus,
    store: &FeatureStore,
    ids: &[String],
    mode: PredictionMode,
    seed: u64,
) -> Result<Confusion> {
    let mut truth = Vec::with_capacity(ids.len());
    let mut utts: Vec<&[FeatureMatrix]> = Vec::with_capacity(ids.len());
    for id in ids {
        let rec = corpus
            .get(id)
            .ok_or_else(|| SerError::InvalidArgument(format!("id {id} not in corpus")))?;
        truth.push(rec.emotion.index());
        utts.push(store.segments(id)?);
    }
    let preds = predict_many(model, &utts, norm, mode, seed)?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.label).collect();
    Confusion::from_predictions(&truth, &predicted)
}

/// Separation of first-segment pooled features on `ids`.
pub fn split_separation(
    model: &ModelParams,
    norm: &NormStats,
    corpus: &Corpus,
    store: &FeatureStore,
    ids: &[String],
) -> Result<SeparationDiagnostics> {
    let mut inputs = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for id in ids {
        let rec = corpus
            .get(id)
            .ok_or_else(|| SerError::InvalidArgument(format!("id {id} not in corpus")))?;
        labels.push(rec.emotion.index());
        inputs.push(apply_norm(store.primary(id)?, norm)?.to_channel_major());
    }
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    separation_diagnostics(&embed_pos1(model, &refs)?, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub report: EvalReport,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub contrastive_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold_index: u8,
    pub n_test: usize,
    pub mean_wa: f64,
    pub mean_uwa: f64,
    pub std_wa: f64,
    pub std_uwa: f64,
    /// Confusion pooled over the fold's runs.
    pub pooled: EvalReport,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config_hash: String,
    pub lambda: f64,
    pub n_runs: usize,
    /// Mean over every (fold, run) model.
    pub mean_wa: f64,
    pub mean_uwa: f64,
    /// Confusion pooled over all folds and runs.
    pub aggregate: EvalReport,
    pub folds: Vec<FoldSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// A trained and scored run.
pub struct TrainedRun {
    pub result: RunResult,
    /// The stored form of the best parameters, which produced `report`.
    pub checkpoint: Checkpoint,
    pub report: EvalReport,
}

impl TrainedRun {
    /// Writes `model.ckpt`, `history.json` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        save_checkpoint(&dir.join("model.ckpt"), &self.checkpoint)?;
        write_canonical(&dir.join("history.json"), &self.result.history)?;
        write_canonical(&dir.join("report.json"), &self.report)
    }
}

/// Trains run `run` of `fold` and scores it on the fold's test session.
pub fn train_run(
    corpus: &Corpus,
    store: &FeatureStore,
    fold: &FoldSplit,
    data: &FoldData,
    cfg: &ExperimentConfig,
    run: usize,
    config_hash: &str,
) -> Result<TrainedRun> {
    let seed = run_seed(cfg.train.seed, fold.fold_index, run);
    let result = train(data, &cfg.train, seed)?;
    let checkpoint = stored_form(&run_checkpoint(&result, data))?;
    let params = &checkpoint.params;
    let confusion = evaluate_split(params, &result.norm, corpus, store, &fold.test_ids, cfg.prediction_mode, seed)?;
    let mut report = EvalReport::from_confusion(&confusion, Some(fold.fold_index), Some(run), cfg.prediction_mode, seed, config_hash)?;
    if cfg.diagnostics {
        report.separation = Some(split_separation(params, &result.norm, corpus, store, &fold.test_ids)?);
    }
    Ok(TrainedRun {
        result,
        checkpoint,
        report,
    })
}

/// Trains `n_runs` models on one fold and scores each on its test session.
/// With `out`, writes `run{r}/{model.ckpt,history.json,report.json}`.
pub fn run_fold(
    corpus: &Corpus,
    store: &FeatureStore,
    fold: &FoldSplit,
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<FoldSummary> {
    let hash = cfg.hash()?;
    let data = FoldData::build(corpus, store, fold, cfg.train.multitask.task)?;
    let mut runs = Vec::with_capacity(cfg.train.n_runs);
    let mut pooled = Confusion::default();
    for r in 0..cfg.train.n_runs {
        let run = train_run(corpus, store, fold, &data, cfg, r, &hash)?;
        pooled.add(&run.report.confusion());
        if let Some(dir) = out {
            run.write(&dir.join(format!("run{r}")))?;
        }
        runs.push(RunSummary {
            best_epoch: run.result.best_epoch,
            epochs_run: run.result.history.len(),
            stopped_early: run.result.stopped_early,
            contrastive_evaluations: run.result.contrastive_evaluations,
            report: run.report,
        });
    }
    let was: Vec<f64> = runs.iter().map(|r| r.report.weighted_accuracy).collect();
    let uwas: Vec<f64> = runs.iter().map(|r| r.report.unweighted_accuracy).collect();
    let (mean_wa, std_wa) = mean_std(&was);
    let (mean_uwa, std_uwa) = mean_std(&uwas);
    Ok(FoldSummary {
        fold_index: fold.fold_index,
        n_test: fold.test_ids.len(),
        mean_wa,
        mean_uwa,
        std_wa,
        std_uwa,
        pooled: EvalReport::from_confusion(&pooled, Some(fold.fold_index), None, cfg.prediction_mode, cfg.train.seed, &hash)?,
        runs,
    })
}

/// Runs the configured folds. With `out`, writes per-fold outputs under
/// `fold{k}/` and the summary to `cv_report.json`.
pub fn cross_validate(corpus: &Corpus, store: &FeatureStore, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<CvReport> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let splits = make_session_folds(corpus, cfg.validation_fraction, cfg.train.seed)?;
    if let Some(dir) = out {
        write_canonical(&dir.join("config.json"), cfg)?;
        write_canonical(&dir.join("folds.json"), &splits)?;
    }
    let mut folds = Vec::with_capacity(cfg.folds.len());
    for split in splits.iter().filter(|s| cfg.folds.contains(&s.fold_index)) {
        let dir = out.map(|d| d.join(format!("fold{}", split.fold_index)));
        folds.push(run_fold(corpus, store, split, cfg, dir.as_deref())?);
    }
    let mut pooled = Confusion::default();
    for f in &folds {
        pooled.add(&f.pooled.confusion());
    }
    let per_run: Vec<&EvalReport> = folds.iter().flat_map(|f| f.runs.iter().map(|r| &r.report)).collect();
    let n = per_run.len() as f64;
    let report = CvReport {
        config_hash: hash.clone(),
        lambda: cfg.train.loss.lambda,
        n_runs: cfg.train.n_runs,
        mean_wa: per_run.iter().map(|r| r.weighted_accuracy).sum::<f64>() / n,
        mean_uwa: per_run.iter().map(|r| r.unweighted_accuracy).sum::<f64>() / n,
        aggregate: EvalReport::from_confusion(&pooled, None, None, cfg.prediction_mode, cfg.train.seed, &hash)?,
        folds,
    };
    if let Some(dir) = out {
        write_canonical(&dir.join("cv_report.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub mean_wa: f64,
    pub mean_uwa: f64,
    pub pooled_wa: f64,
    pub pooled_uwa: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Lambda with the highest mean weighted accuracy.
    pub best_lambda: f64,
}

/// Cross-validates once per value in `cfg.lambda_grid`.
pub fn sweep_lambda(corpus: &Corpus, store: &FeatureStore, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SweepReport> {
    if cfg.lambda_grid.is_empty() {
        return Err(SerError::InvalidArgument("empty lambda_grid".into()));
    }
    let mut points = Vec::with_capacity(cfg.lambda_grid.len());
    for &lambda in &cfg.lambda_grid {
        let c = cfg.with_lambda(lambda);
        let dir = out.map(|d| d.join(format!("lambda_{lambda:.2}")));
        let r = cross_validate(corpus, store, &c, dir.as_deref())?;
        points.push(SweepPoint {
            lambda,
            mean_wa: r.mean_wa,
            mean_uwa: r.mean_uwa,
            pooled_wa: weighted_accuracy(&r.aggregate.confusion())?,
            pooled_uwa: unweighted_accuracy(&r.aggregate.confusion())?,
            config_hash: r.config_hash,
        });
    }
    let best_lambda = points
        .iter()
        .fold(None::<&SweepPoint>, |best, p| match best {
            Some(b) if b.mean_wa >= p.mean_wa => Some(b),
            _ => Some(p),
        })
        .map(|p| p.lambda)
        .expect("non-empty grid");
    let report = SweepReport { points, best_lambda };
    if let Some(dir) = out {
        write_canonical(&dir.join("sweep_report.json"), &report)?;
    }
    Ok(report)
}

/// History of a run, for callers that only hold a summary path.
pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| SerError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
