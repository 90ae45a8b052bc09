//! Normalized, network-ready views of a fold and pair batches drawn from it.

use serde::{Deserialize, Serialize};

use crate::data::folds::FoldSplit;
use crate::data::manifest::{discretize_dimension, Corpus, UtteranceRecord};
use crate::dsp::features::{FeatureConfig, FeatureMatrix};
use crate::dsp::norm::{apply_norm, compute_norm_stats, NormStats};
use crate::dsp::store::FeatureStore;
use crate::error::{Result, SerError};
use crate::losses::AuxTask;
use crate::nn::layers::Mode;
use crate::nn::model::{forward, ForwardOutput, ModelParams};
use crate::nn::tensor::Tensor;

/// Utterances per eval-mode forward pass.
pub const EVAL_CHUNK: usize = 64;

/// Auxiliary class index of `rec` for `task`; `None` when the label is absent.
pub fn aux_label(rec: &UtteranceRecord, task: AuxTask) -> Result<Option<usize>> {
    let dim = |v: Option<f64>| v.map(|x| discretize_dimension(x).map(|c| c.index())).transpose();
    match task {
        AuxTask::None => Ok(None),
        AuxTask::Gender => Ok(rec.gender.map(|g| g.index())),
        AuxTask::Valence => dim(rec.valence),
        AuxTask::Activation => dim(rec.activation),
        AuxTask::Dominance => dim(rec.dominance),
    }
}

/// Normalized channel-major inputs with labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub ids: Vec<String>,
    /// One `d x s` channel-major vector per utterance.
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub aux: Option<Vec<usize>>,
}

impl Split {
    pub fn from_features(
        ids: Vec<String>,
        features: &[&FeatureMatrix],
        labels: Vec<usize>,
        aux: Option<Vec<usize>>,
        norm: &NormStats,
    ) -> Result<Split> {
        if features.len() != ids.len() || labels.len() != ids.len() || aux.as_ref().is_some_and(|a| a.len() != ids.len()) {
            return Err(SerError::Shape("split ids, features and labels differ in length".into()));
        }
        let inputs = features
            .iter()
            .map(|f| Ok(apply_norm(f, norm)?.to_channel_major()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Split {
            ids,
            inputs,
            labels,
            aux,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn input_refs(&self) -> Vec<&[f64]> {
        self.inputs.iter().map(Vec::as_slice).collect()
    }
}

/// Training and validation splits of one fold, normalized with statistics
/// from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldData {
    pub fold_index: u8,
    pub train: Split,
    pub validation: Split,
    pub norm: NormStats,
    pub in_ch: usize,
    pub seq_len: usize,
    pub feature_config: FeatureConfig,
}

impl FoldData {
    pub fn build(corpus: &Corpus, store: &FeatureStore, fold: &FoldSplit, task: AuxTask) -> Result<FoldData> {
        let records = |ids: &[String]| {
            ids.iter()
                .map(|id| {
                    corpus
                        .get(id)
                        .ok_or_else(|| SerError::InvalidArgument(format!("id {id} not in corpus")))
                })
                .collect::<Result<Vec<_>>>()
        };
        let train_recs = records(&fold.train_ids)?;
        let val_recs = records(&fold.validation_ids)?;
        if task != AuxTask::None {
            let missing: Vec<String> = train_recs
                .iter()
                .chain(&val_recs)
                .filter(|r| !matches!(aux_label(r, task), Ok(Some(_))))
                .map(|r| r.id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(SerError::MissingAuxLabels(missing));
            }
        }
        let primary = |recs: &[&UtteranceRecord]| {
            recs.iter()
                .map(|r| store.primary(&r.id))
                .collect::<Result<Vec<_>>>()
        };
        let train_feats = primary(&train_recs)?;
        let val_feats = primary(&val_recs)?;
        let norm = compute_norm_stats(&train_feats)?;
        let split = |recs: &[&UtteranceRecord], feats: &[&FeatureMatrix]| {
            let aux = match task {
                AuxTask::None => None,
                _ => Some(
                    recs.iter()
                        .map(|r| Ok(aux_label(r, task)?.expect("checked above")))
                        .collect::<Result<Vec<_>>>()?,
                ),
            };
            Split::from_features(
                recs.iter().map(|r| r.id.clone()).collect(),
                feats,
                recs.iter().map(|r| r.emotion.index()).collect(),
                aux,
                &norm,
            )
        };
        let train = split(&train_recs, &train_feats)?;
        let validation = split(&val_recs, &val_feats)?;
        let first = train_feats
            .first()
            .ok_or_else(|| SerError::InvalidArgument("empty training split".into()))?;
        Ok(FoldData {
            fold_index: fold.fold_index,
            in_ch: first.dim,
            seq_len: first.frames,
            feature_config: store.config().clone(),
            train,
            validation,
            norm,
        })
    }
}

/// Stacks channel-major inputs into a `batch x d x s` tensor.
pub fn stack_inputs(inputs: &[&[f64]], in_ch: usize, seq_len: usize) -> Result<Tensor> {
    let per = in_ch * seq_len;
    if let Some(bad) = inputs.iter().find(|x| x.len() != per) {
        return Err(SerError::Shape(format!("input of {} values, expected {per}", bad.len())));
    }
    Tensor::new(&[inputs.len(), in_ch, seq_len], inputs.concat())
}

/// Runs eval-mode forward passes over `inputs` in chunks, handing each
/// chunk's output and its starting index to `f`.
pub fn for_each_eval_chunk<F>(model: &ModelParams, inputs: &[&[f64]], mut f: F) -> Result<()>
where
    F: FnMut(usize, &ForwardOutput) -> Result<()>,
{
    let (d, s) = (model.dims.in_ch, model.dims.seq_len);
    for (k, chunk) in inputs.chunks(EVAL_CHUNK).enumerate() {
        let out = forward(model, &stack_inputs(chunk, d, s)?, Mode::Eval)?;
        f(k * EVAL_CHUNK, &out)?;
    }
    Ok(())
}

/// Both sides of a batch of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub x1: Tensor,
    pub x2: Tensor,
    /// `true` iff the two sides share an emotion class.
    pub positive: Vec<bool>,
    pub class1: Vec<usize>,
    pub class2: Vec<usize>,
    pub aux1: Option<Vec<usize>>,
    pub aux2: Option<Vec<usize>>,
}

impl PairBatch {
    pub fn from_pairs(split: &Split, pairs: &[(usize, usize)], in_ch: usize, seq_len: usize) -> Result<PairBatch> {
        let side = |pick: fn(&(usize, usize)) -> usize| {
            let idx: Vec<usize> = pairs.iter().map(pick).collect();
            let x = stack_inputs(&idx.iter().map(|&i| split.inputs[i].as_slice()).collect::<Vec<_>>(), in_ch, seq_len)?;
            let class: Vec<usize> = idx.iter().map(|&i| split.labels[i]).collect();
            let aux = split.aux.as_ref().map(|a| idx.iter().map(|&i| a[i]).collect());
            Ok::<_, SerError>((x, class, aux))
        };
        let (x1, class1, aux1) = side(|p| p.0)?;
        let (x2, class2, aux2) = side(|p| p.1)?;
        Ok(PairBatch {
            positive: class1.iter().zip(&class2).map(|(a, b)| a == b).collect(),
            x1,
            x2,
            class1,
            class2,
            aux1,
            aux2,
        })
    }

    pub fn len(&self) -> usize {
        self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty()
    }
}
