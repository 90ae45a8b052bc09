//! The epoch loop: pair sampling, siamese steps, Adam, plateau halving and
//! early stopping with best-checkpoint restore.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SerError};
use crate::eval::metrics::{unweighted_accuracy, weighted_accuracy, Confusion};
use crate::losses::{cross_entropy_with_logits, LossConfig, MultiTaskConfig};
use crate::nn::layers::argmax;
use crate::nn::model::{init_params, ModelDims, ModelParams};
use crate::dsp::norm::NormStats;
use crate::train::data::{for_each_eval_chunk, FoldData, PairBatch, Split};
use crate::train::optim::{adam_step, AdamState, PlateauScheduler};
use crate::train::sampler::{loader_1, loader_2, Sampler};
use crate::train::step::siamese_step;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub multitask: MultiTaskConfig,
    pub sampler: Sampler,
    /// Pairs per epoch for the balanced sampler; `None` uses the pool size.
    pub loader_2_pairs: Option<usize>,
    /// Pairs per step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub n_runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            multitask: MultiTaskConfig::default(),
            sampler: Sampler::Coverage,
            loader_2_pairs: None,
            batch_size: 32,
            max_epochs: 100,
            lr0: 1e-4,
            plateau_patience: 2,
            early_stop_patience: 10,
            seed: 0,
            n_runs: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.multitask.validate()?;
        if self.batch_size == 0 || !(self.lr0 > 0.0) || self.max_epochs == 0 || self.n_runs == 0 {
            return Err(SerError::InvalidArgument(
                "batch_size, max_epochs and n_runs must be >= 1 and lr0 > 0".into(),
            ));
        }
        if self.multitask.is_active() && self.loss.lambda > 0.0 {
            return Err(SerError::InvalidArgument(
                "multi-task training runs without the contrastive term; set loss.lambda to 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_cross_entropy: f64,
    pub train_contrastive: Option<f64>,
    pub train_aux: Option<f64>,
    pub val_loss: f64,
    pub val_wa: f64,
    pub val_uwa: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Times the contrastive function was evaluated.
    pub contrastive_evaluations: u64,
    pub degenerate_pairs: u64,
    /// Parameters from the best validation epoch.
    pub params: ModelParams,
    pub norm: NormStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationResult {
    pub loss: f64,
    pub confusion: Confusion,
}

/// Emotion cross-entropy and confusion of `split` in eval mode.
pub fn validate(model: &ModelParams, split: &Split) -> Result<ValidationResult> {
    if split.is_empty() {
        return Err(SerError::InvalidArgument("empty validation split".into()));
    }
    let mut total = 0.0;
    let mut confusion = Confusion::default();
    for_each_eval_chunk(model, &split.input_refs(), |start, out| {
        let labels = &split.labels[start..start + out.batch];
        let (ce, _) = cross_entropy_with_logits(&out.logits, labels)?;
        total += ce * out.batch as f64;
        for (i, &t) in labels.iter().enumerate() {
            confusion.record(t, argmax(out.probs.row(i)))?;
        }
        Ok(())
    })?;
    Ok(ValidationResult {
        loss: total / split.len() as f64,
        confusion,
    })
}

pub fn model_dims(data: &FoldData, cfg: &TrainConfig) -> ModelDims {
    ModelDims::standard(data.in_ch, data.seq_len).with_aux(cfg.multitask.task.n_classes().filter(|_| cfg.multitask.is_active()))
}

fn epoch_pairs(data: &FoldData, cfg: &TrainConfig, seed: u64, epoch: usize) -> Result<Vec<(usize, usize)>> {
    match cfg.sampler {
        Sampler::Coverage => loader_1(data.train.len(), seed, epoch as u64),
        Sampler::Balanced => loader_2(&data.train.labels, crate::eval::metrics::N_CLASSES, seed, epoch as u64, cfg.loader_2_pairs),
    }
}

/// Trains one run on `data` from `seed` (weight init and sampler) and
/// returns the best-validation model. Deterministic given its inputs.
pub fn train(data: &FoldData, cfg: &TrainConfig, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let mut params = init_params(seed, &model_dims(data, cfg))?;
    let mut adam = AdamState::new(params.param_count());
    let mut sched = PlateauScheduler::new(cfg.lr0, cfg.plateau_patience);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut since_best = 0;
    let mut stopped_early = false;
    let (mut n_con, mut n_degenerate) = (0u64, 0u64);

    for epoch in 0..cfg.max_epochs {
        let lr = sched.lr;
        let pairs = epoch_pairs(data, cfg, seed, epoch)?;
        let mut sums = [0.0f64; 4];
        let mut n_pairs = 0usize;
        for chunk in pairs.chunks(cfg.batch_size) {
            let batch = PairBatch::from_pairs(&data.train, chunk, data.in_ch, data.seq_len)?;
            let step = siamese_step(&params, &batch, &cfg.loss, &cfg.multitask)?;
            step.grads.flatten().iter().try_for_each(|g| {
                g.is_finite()
                    .then_some(())
                    .ok_or_else(|| SerError::InvalidArgument(format!("non-finite gradient at epoch {epoch}")))
            })?;
            let w = chunk.len() as f64;
            sums[0] += step.loss * w;
            sums[1] += step.cross_entropy * w;
            sums[2] += step.contrastive.unwrap_or(0.0) * w;
            sums[3] += step.aux.unwrap_or(0.0) * w;
            n_pairs += chunk.len();
            n_con += u64::from(step.contrastive.is_some());
            n_degenerate += step.degenerate_pairs as u64;
            for side in &step.sides {
                params.update_running_stats(side);
            }
            adam_step(&mut params, &step.grads, &mut adam, lr);
        }
        let mean = |s: f64| s / n_pairs.max(1) as f64;
        let val = validate(&params, &data.validation)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: mean(sums[0]),
            train_cross_entropy: mean(sums[1]),
            train_contrastive: (cfg.loss.lambda > 0.0 && !cfg.multitask.is_active()).then(|| mean(sums[2])),
            train_aux: cfg.multitask.is_active().then(|| mean(sums[3])),
            val_loss: val.loss,
            val_wa: weighted_accuracy(&val.confusion)?,
            val_uwa: unweighted_accuracy(&val.confusion)?,
            lr,
        });
        sched.observe(val.loss);
        if val.loss < best.0 {
            best = (val.loss, epoch + 1, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(RunResult {
        seed,
        history,
        best_epoch: best.1,
        best_val_loss: best.0,
        stopped_early,
        contrastive_evaluations: n_con,
        degenerate_pairs: n_degenerate,
        params: best.2,
        norm: data.norm.clone(),
    })
}

/// [`train`] with an auxiliary head; requires an active auxiliary task.
pub fn train_multitask(data: &FoldData, cfg: &TrainConfig, seed: u64) -> Result<RunResult> {
    if !cfg.multitask.is_active() {
        return Err(SerError::InvalidArgument("train_multitask needs an auxiliary task".into()));
    }
    if data.train.aux.is_none() {
        return Err(SerError::InvalidArgument("fold data was built without auxiliary labels".into()));
    }
    train(data, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::features::FeatureConfig;
    use crate::losses::{AuxTask, LossType, Position};
    use crate::nn::gradcheck::{finite_diff_check, DEFAULT_STEP};
    use crate::nn::model::{backward, forward};
    use crate::nn::layers::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: usize = 13;
    const S: usize = 40;

    /// Class-dependent random inputs: class `k` shifts channel `k`.
    fn split(n: usize, seed: u64) -> Split {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let inputs = labels
            .iter()
            .map(|&k| {
                (0..D * S)
                    .map(|j| rng.random_range(-1.0..1.0) + if j / S == k { 1.5 } else { 0.0 })
                    .collect()
            })
            .collect();
        Split {
            ids: (0..n).map(|i| format!("u{i}")).collect(),
            inputs,
            aux: Some(labels.iter().map(|&k| k % 2).collect()),
            labels,
        }
    }

    fn fold(n_train: usize) -> FoldData {
        FoldData {
            fold_index: 1,
            train: split(n_train, 1),
            validation: split(8, 2),
            norm: NormStats {
                mean: vec![0.0; D],
                std: vec![1.0; D],
            },
            in_ch: D,
            seq_len: S,
            feature_config: FeatureConfig::default(),
        }
    }

    fn tiny_batch(seed: u64) -> PairBatch {
        let s = split(8, seed);
        PairBatch::from_pairs(&s, &[(0, 4), (1, 2), (3, 7), (5, 6)], D, S).unwrap()
    }

    #[test]
    fn pair_batch_labels_follow_classes() {
        let b = tiny_batch(3);
        assert_eq!(b.positive, [true, false, true, false]);
        assert_eq!(b.x1.shape(), [4, D, S]);
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let mut m = init_params(4, &ModelDims::tiny()).unwrap();
        m.fc.bias = vec![0.1, -0.2, 0.05, 0.0];
        let batch = tiny_batch(5);
        for (loss_type, position) in [(LossType::Cosine, Position::Pooled), (LossType::Euclidean, Position::Logits)] {
            let cfg = LossConfig {
                lambda: 0.5,
                loss_type,
                position,
                margin: Some(if loss_type == LossType::Cosine { 0.3 } else { 50.0 }),
                ..LossConfig::default()
            };
            let mt = MultiTaskConfig::default();
            let g = siamese_step(&m, &batch, &cfg, &mt).unwrap().grads.flatten();
            let mut probe = m.clone();
            let rep = finite_diff_check(
                |w| {
                    probe.set_flat(w).unwrap();
                    siamese_step(&probe, &batch, &cfg, &mt).unwrap().loss
                },
                &m.flatten(),
                &g,
                DEFAULT_STEP,
            );
            assert!(rep.passes(1e-4), "{loss_type:?} {position:?} {rep:?}");
        }
    }

    #[test]
    fn gradcheck_grid_covers_all_losses() {
        let cases = crate::train::step::gradcheck_grid(2..3, DEFAULT_STEP).unwrap();
        assert_eq!(cases.len(), 12);
        for c in &cases {
            assert!(c.report.passes(1e-4), "{c:?}");
        }
    }

    #[test]
    fn lambda_zero_is_two_cross_entropy_steps() {
        let m = init_params(6, &ModelDims::tiny()).unwrap();
        let batch = tiny_batch(7);
        let step = siamese_step(&m, &batch, &LossConfig::default(), &MultiTaskConfig::default()).unwrap();
        assert!(step.contrastive.is_none());
        let mut want = None::<crate::nn::model::Gradients>;
        for (x, y) in [(&batch.x1, &batch.class1), (&batch.x2, &batch.class2)] {
            let out = forward(&m, x, Mode::Train).unwrap();
            let (_, g) = cross_entropy_with_logits(&out.logits, y).unwrap();
            let mut half = g.clone();
            half.data_mut().iter_mut().for_each(|v| *v *= 0.5);
            let gr = backward(&m, &out, None, Some(&half), None).unwrap();
            match &mut want {
                Some(w) => w.add_assign(&gr),
                None => want = Some(gr),
            }
        }
        let (a, b) = (step.grads.flatten(), want.unwrap().flatten());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-15 * (1.0 + y.abs())));
    }

    #[test]
    fn identical_positive_pairs_have_no_contrastive_gradient() {
        let m = init_params(8, &ModelDims::tiny()).unwrap();
        let s = split(4, 9);
        let batch = PairBatch::from_pairs(&s, &[(0, 0), (1, 1), (2, 2)], D, S).unwrap();
        let cfg = LossConfig {
            lambda: 1.0,
            ..LossConfig::default()
        };
        let step = siamese_step(&m, &batch, &cfg, &MultiTaskConfig::default()).unwrap();
        assert_eq!(step.contrastive, Some(0.0));
        assert!(step.grads.max_abs() < 1e-12, "{}", step.grads.max_abs());
    }

    #[test]
    fn one_epoch_and_determinism() {
        let data = fold(16);
        let cfg = TrainConfig {
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let r = train(&data, &cfg, 3).unwrap();
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.contrastive_evaluations, 0);
        let cfg = TrainConfig {
            max_epochs: 3,
            loss: LossConfig {
                lambda: 0.5,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg, 3).unwrap();
        let b = train(&data, &cfg, 3).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert!(a.contrastive_evaluations > 0);
    }

    #[test]
    fn memorizes_a_small_set() {
        let data = fold(16);
        let cfg = TrainConfig {
            max_epochs: 200,
            early_stop_patience: 200,
            plateau_patience: 200,
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        let r = train(&data, &cfg, 1).unwrap();
        let last = r.history.last().unwrap().train_loss;
        assert!(last < 0.05, "final train loss {last}");
    }

    #[test]
    fn multitask_with_zero_weight_tracks_baseline() {
        let data = fold(16);
        let base = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let mt = TrainConfig {
            multitask: MultiTaskConfig {
                lambda_mt: 0.0,
                task: AuxTask::Gender,
            },
            ..base.clone()
        };
        let a = train(&data, &base, 5).unwrap();
        let b = train_multitask(&data, &mt, 5).unwrap();
        assert_eq!(b.params.aux.as_ref().unwrap().n_out, 2);
        let n = a.params.param_count();
        assert_eq!(a.params.flatten(), b.params.flatten()[..n]);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!((x.val_loss, x.train_cross_entropy), (y.val_loss, y.train_cross_entropy));
        }
        assert!(train_multitask(&data, &base, 5).is_err());
        let both = TrainConfig {
            loss: LossConfig {
                lambda: 0.5,
                ..LossConfig::default()
            },
            ..mt
        };
        assert!(train(&data, &both, 5).is_err());
    }

    #[test]
    fn learning_rate_never_increases() {
        let data = fold(16);
        let cfg = TrainConfig {
            max_epochs: 12,
            plateau_patience: 1,
            early_stop_patience: 100,
            lr0: 3e-3,
            ..TrainConfig::default()
        };
        let r = train(&data, &cfg, 2).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1].lr <= w[0].lr);
        }
        for h in &r.history {
            let k = (cfg.lr0 / h.lr).log2();
            assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
