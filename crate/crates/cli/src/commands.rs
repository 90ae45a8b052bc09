use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ser_core::data::{filter_improvised, generate_synthetic_corpus, make_session_folds, parse_manifest, Corpus, SynthConfig};
use ser_core::dsp::{FeatureConfig, FeatureKind, FeatureStore};
use ser_core::eval::{
    canonical_json, config_hash, cross_validate as run_cv, evaluate_split, load_experiment, prepare_corpus,
    sweep_lambda as run_sweep, train_run, write_canonical, EvalReport, ExperimentConfig, PredictionMode,
};
use ser_core::nn::{load_checkpoint, DEFAULT_STEP};
use ser_core::train::{gradcheck_grid, FoldData};

use crate::{Kind, Mode};

fn load_config(path: &Path, manifest: Option<PathBuf>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = load_experiment(path).with_context(|| format!("loading {}", path.display()))?;
    if manifest.is_some() {
        cfg.manifest = manifest;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth_corpus(out: &Path, n_per_class: usize, duration_range: (f64, f64), seed: u64) -> Result<bool> {
    let corpus = generate_synthetic_corpus(
        &SynthConfig {
            n_per_class,
            duration_range,
            seed,
        },
        out,
    )?;
    println!("wrote {} utterances to {}", corpus.len(), out.display());
    Ok(true)
}

pub fn extract_features(manifest: &Path, cache_dir: &Path, t_fixed: f64, kind: Kind) -> Result<bool> {
    let kind = match kind {
        Kind::Mfcc13 => FeatureKind::Mfcc13,
        Kind::Logmel26 => FeatureKind::Logmel26,
    };
    let cfg = FeatureConfig {
        kind,
        t_fixed,
        ..FeatureConfig::default()
    };
    cfg.validate()?;
    let corpus = filter_improvised(&parse_manifest(manifest)?);
    let store = FeatureStore::build(&corpus, &cfg, Some(cache_dir))?;
    let segments: usize = corpus
        .records
        .iter()
        .map(|r| store.segments(&r.id).map(<[_]>::len))
        .sum::<ser_core::Result<usize>>()?;
    println!(
        "{} utterances, {segments} segments of {}x{} features cached under {}",
        store.len(),
        cfg.n_frames(),
        cfg.dim(),
        cache_dir.display()
    );
    Ok(true)
}

pub fn train(config: &Path, fold: u8, run: usize, manifest: Option<PathBuf>, out: &Path) -> Result<bool> {
    let cfg = load_config(config, manifest, None)?;
    let (corpus, store) = prepare_corpus(&cfg)?;
    let folds = make_session_folds(&corpus, cfg.validation_fraction, cfg.train.seed)?;
    let split = folds
        .iter()
        .find(|f| f.fold_index == fold)
        .with_context(|| format!("fold {fold} not in 1..=5"))?;
    let data = FoldData::build(&corpus, &store, split, cfg.train.multitask.task)?;
    let trained = train_run(&corpus, &store, split, &data, &cfg, run, &cfg.hash()?)?;
    trained.write(out)?;
    let r = &trained.report;
    println!(
        "fold {fold} run {run}: best epoch {} of {}, test WA {:.4} UWA {:.4}",
        trained.result.best_epoch,
        trained.result.history.len(),
        r.weighted_accuracy,
        r.unweighted_accuracy
    );
    Ok(true)
}

pub fn evaluate(
    checkpoint: &Path,
    manifest: &Path,
    session: Option<u8>,
    mode: Mode,
    seed: Option<u64>,
    cache_dir: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let ck = load_checkpoint(checkpoint)?;
    let (Some(features), Some(norm)) = (&ck.header.feature_config, &ck.header.norm) else {
        bail!("checkpoint {} lacks feature config or normalization statistics", checkpoint.display());
    };
    let corpus = filter_improvised(&parse_manifest(manifest)?);
    let records: Vec<_> = corpus
        .records
        .iter()
        .filter(|r| session.is_none_or(|s| r.session == s))
        .cloned()
        .collect();
    if records.is_empty() {
        bail!("no improvised utterances to evaluate");
    }
    let corpus = Corpus::new(records)?;
    let cache = ser_core::dsp::resolve_cache_dir(cache_dir.as_deref());
    let store = FeatureStore::build(&corpus, features, cache.as_deref())?;
    let ids: Vec<String> = corpus.records.iter().map(|r| r.id.clone()).collect();
    let mode = match mode {
        Mode::Average => PredictionMode::Average,
        Mode::Crop => PredictionMode::Crop,
    };
    let seed = seed.unwrap_or(ck.header.seed);
    let confusion = evaluate_split(&ck.params, norm, &corpus, &store, &ids, mode, seed)?;
    let report = EvalReport::from_confusion(&confusion, session, None, mode, seed, &config_hash(&ck.header)?)?;
    match out {
        Some(path) => {
            write_canonical(&path, &report)?;
            println!(
                "WA {:.4} UWA {:.4} on {} utterances; report at {}",
                report.weighted_accuracy,
                report.unweighted_accuracy,
                report.n_test,
                path.display()
            );
        }
        None => print!("{}", canonical_json(&report)?),
    }
    Ok(true)
}

pub fn cross_validate(config: &Path, manifest: Option<PathBuf>, out: Option<PathBuf>) -> Result<bool> {
    let cfg = load_config(config, manifest, out)?;
    let (corpus, store) = prepare_corpus(&cfg)?;
    let report = run_cv(&corpus, &store, &cfg, Some(&cfg.output_dir))?;
    for f in &report.folds {
        println!(
            "fold {}: WA {:.4} ± {:.4}  UWA {:.4} ± {:.4}  ({} runs, {} test)",
            f.fold_index, f.mean_wa, f.std_wa, f.mean_uwa, f.std_uwa, f.runs.len(), f.n_test
        );
    }
    println!(
        "mean WA {:.4} UWA {:.4}; pooled WA {:.4} UWA {:.4}; report at {}",
        report.mean_wa,
        report.mean_uwa,
        report.aggregate.weighted_accuracy,
        report.aggregate.unweighted_accuracy,
        cfg.output_dir.join("cv_report.json").display()
    );
    Ok(true)
}

pub fn sweep_lambda(config: &Path, manifest: Option<PathBuf>, out: Option<PathBuf>) -> Result<bool> {
    let cfg = load_config(config, manifest, out)?;
    let (corpus, store) = prepare_corpus(&cfg)?;
    let report = run_sweep(&corpus, &store, &cfg, Some(&cfg.output_dir))?;
    println!("{:>7} {:>8} {:>8}", "lambda", "WA", "UWA");
    for p in &report.points {
        println!("{:>7.2} {:>8.4} {:>8.4}", p.lambda, p.mean_wa, p.mean_uwa);
    }
    println!("best lambda {:.2}", report.best_lambda);
    Ok(true)
}

pub fn gradcheck(seeds: u64, tolerance: f64) -> Result<bool> {
    let cases = gradcheck_grid(0..seeds, DEFAULT_STEP)?;
    let mut all = true;
    for c in &cases {
        let ok = c.report.passes(tolerance);
        all &= ok;
        println!(
            "{} seed {} {:?} {:?} lambda {:.1}: max rel error {:.2e} over {} params",
            if ok { "ok  " } else { "FAIL" },
            c.seed,
            c.loss_type,
            c.position,
            c.lambda,
            c.report.max_rel_error,
            c.report.n_checked
        );
    }
    let worst = cases.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    println!("{} cases, worst relative error {worst:.2e}, tolerance {tolerance:.0e}", cases.len());
    Ok(all)
}
