//! Pairwise contrastive losses, cross-entropy and their combinations, each
//! returning the value together with its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SerError};
use crate::nn::layers::softmax;
use crate::nn::tensor::Tensor;

/// Probabilities are clamped below at this value before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossType {
    /// Cosine form: `1 - cos` for positive pairs, `max(0, cos - m)` otherwise.
    #[serde(rename = "loss_1")]
    Cosine,
    /// Euclidean form: `d` for positive pairs, `max(0, m - d)` otherwise.
    #[serde(rename = "loss_2")]
    Euclidean,
}

impl LossType {
    pub fn default_margin(self) -> f64 {
        match self {
            LossType::Cosine => 0.5,
            LossType::Euclidean => 1.0,
        }
    }
}

/// Where the contrastive term reads the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Position {
    /// Concatenated pooled features.
    #[serde(rename = "pos_1")]
    Pooled,
    /// Pre-softmax logits.
    #[serde(rename = "pos_2")]
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the contrastive term; 0 trains on cross-entropy alone.
    pub lambda: f64,
    /// `None` picks the loss type's default.
    pub margin: Option<f64>,
    pub loss_type: LossType,
    pub position: Position,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.0,
            margin: None,
            loss_type: LossType::Cosine,
            position: Position::Pooled,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or_else(|| self.loss_type.default_margin())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SerError::Range {
                value: self.lambda,
                range: "[0, 1]",
            });
        }
        let m = self.margin();
        match self.loss_type {
            LossType::Cosine if !(m > 0.0 && m < 1.0) => Err(SerError::Range {
                value: m,
                range: "(0, 1)",
            }),
            LossType::Euclidean if !(m > 0.0 && m.is_finite()) => Err(SerError::Range {
                value: m,
                range: "(0, inf)",
            }),
            _ => Ok(()),
        }
    }
}

/// Auxiliary target for multi-task training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxTask {
    None,
    Gender,
    Valence,
    Activation,
    Dominance,
}

impl AuxTask {
    pub fn n_classes(self) -> Option<usize> {
        match self {
            AuxTask::None => None,
            AuxTask::Gender => Some(2),
            AuxTask::Valence | AuxTask::Activation | AuxTask::Dominance => Some(3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskConfig {
    pub lambda_mt: f64,
    pub task: AuxTask,
}

impl Default for MultiTaskConfig {
    fn default() -> Self {
        MultiTaskConfig {
            lambda_mt: 0.0,
            task: AuxTask::None,
        }
    }
}

impl MultiTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.lambda_mt) {
            return Err(SerError::Range {
                value: self.lambda_mt,
                range: "[0, 0.5]",
            });
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.task != AuxTask::None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_similarity(x1: &[f64], x2: &[f64]) -> f64 {
    let (s1, s2) = (dot(x1, x1), dot(x2, x2));
    if s1 == 0.0 || s2 == 0.0 {
        return 0.0;
    }
    // sqrt(s * s) == s exactly, so identical vectors give exactly 1.
    (dot(x1, x2) / (s1 * s2).sqrt()).clamp(-1.0, 1.0)
}

/// Value and gradient of one pair term.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// A zero-norm vector hit the cosine guard.
    pub degenerate: bool,
}

impl PairLoss {
    fn flat(value: f64, n: usize, degenerate: bool) -> PairLoss {
        PairLoss {
            value,
            d1: vec![0.0; n],
            d2: vec![0.0; n],
            degenerate,
        }
    }
}

/// Cosine similarity with gradients, scaled by `sign`.
fn cosine_with_grad(x1: &[f64], x2: &[f64], sign: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let (n1, n2) = (norm(x1), norm(x2));
    let c = cosine_similarity(x1, x2);
    let inv = 1.0 / (n1 * n2);
    let (a1, a2) = (c / (n1 * n1), c / (n2 * n2));
    let d1 = x1.iter().zip(x2).map(|(u, v)| sign * (v * inv - a1 * u)).collect();
    let d2 = x1.iter().zip(x2).map(|(u, v)| sign * (u * inv - a2 * v)).collect();
    (c, d1, d2)
}

pub fn contrastive_loss_1(x1: &[f64], x2: &[f64], positive: bool, margin: f64) -> PairLoss {
    let n = x1.len();
    if norm(x1) == 0.0 || norm(x2) == 0.0 {
        let value = if positive { 1.0 } else { (0.0f64 - margin).max(0.0) };
        return PairLoss::flat(value, n, true);
    }
    if positive {
        let (c, d1, d2) = cosine_with_grad(x1, x2, -1.0);
        PairLoss {
            value: 1.0 - c,
            d1,
            d2,
            degenerate: false,
        }
    } else {
        let c = cosine_similarity(x1, x2);
        if c > margin {
            let (c, d1, d2) = cosine_with_grad(x1, x2, 1.0);
            PairLoss {
                value: c - margin,
                d1,
                d2,
                degenerate: false,
            }
        } else {
            PairLoss::flat(0.0, n, false)
        }
    }
}

pub fn contrastive_loss_2(x1: &[f64], x2: &[f64], positive: bool, margin: f64) -> PairLoss {
    let diff: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
    let d = norm(&diff);
    let (value, scale) = match (positive, d > 0.0) {
        (true, true) => (d, 1.0 / d),
        (true, false) => (0.0, 0.0),
        (false, _) if d < margin => (margin - d, if d > 0.0 { -1.0 / d } else { 0.0 }),
        (false, _) => (0.0, 0.0),
    };
    let d1: Vec<f64> = diff.iter().map(|v| scale * v).collect();
    let d2 = d1.iter().map(|v| -v).collect();
    PairLoss {
        value,
        d1,
        d2,
        degenerate: false,
    }
}

pub fn contrastive_pair(x1: &[f64], x2: &[f64], positive: bool, cfg: &LossConfig) -> PairLoss {
    match cfg.loss_type {
        LossType::Cosine => contrastive_loss_1(x1, x2, positive, cfg.margin()),
        LossType::Euclidean => contrastive_loss_2(x1, x2, positive, cfg.margin()),
    }
}

/// Reduced pair loss over a batch with gradients for each side.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub d1: Tensor,
    pub d2: Tensor,
    pub degenerate: usize,
}

/// Row `i` of `x1` and `x2` form pair `i`; `positive[i]` says whether the
/// pair shares a class.
pub fn pairwise_batch_loss(x1: &Tensor, x2: &Tensor, positive: &[bool], cfg: &LossConfig) -> Result<BatchLoss> {
    let (n, dim) = x1.dims2()?;
    if x2.shape() != x1.shape() || positive.len() != n {
        return Err(SerError::Shape(format!(
            "pair sides {:?} / {:?} with {} labels",
            x1.shape(),
            x2.shape(),
            positive.len()
        )));
    }
    if n == 0 {
        return Err(SerError::InvalidArgument("empty pair list".into()));
    }
    let scale = match cfg.reduction {
        Reduction::Mean => 1.0 / n as f64,
        Reduction::Sum => 1.0,
    };
    let mut value = 0.0;
    let mut degenerate = 0;
    let mut d1 = Vec::with_capacity(n * dim);
    let mut d2 = Vec::with_capacity(n * dim);
    for (i, &y) in positive.iter().enumerate() {
        let p = contrastive_pair(x1.row(i), x2.row(i), y, cfg);
        value += p.value;
        degenerate += usize::from(p.degenerate);
        d1.extend(p.d1.iter().map(|v| v * scale));
        d2.extend(p.d2.iter().map(|v| v * scale));
    }
    Ok(BatchLoss {
        value: value * scale,
        d1: Tensor::new(&[n, dim], d1)?,
        d2: Tensor::new(&[n, dim], d2)?,
        degenerate,
    })
}

/// `-sum p_i ln q_i` with `q` clamped below at [`PROB_FLOOR`].
pub fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    -p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi != 0.0)
        .map(|(pi, qi)| pi * qi.max(PROB_FLOOR).ln())
        .sum::<f64>()
}

/// Mean cross-entropy of softmax(logits) against hard targets, with the
/// gradient with respect to the logits (`(q - p) / n`).
pub fn cross_entropy_with_logits(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = logits.dims2()?;
    if targets.len() != n || n == 0 {
        return Err(SerError::Shape(format!("{n} logit rows, {} targets", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(SerError::InvalidArgument(format!("target {t} out of {k} classes")));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (i, &t) in targets.iter().enumerate() {
        let q = softmax(logits.row(i));
        total -= q[t].max(PROB_FLOOR).ln();
        grad.extend(q.iter().enumerate().map(|(c, qc)| {
            (qc - if c == t { 1.0 } else { 0.0 }) / n as f64
        }));
    }
    Ok((total / n as f64, Tensor::new(&[n, k], grad)?))
}

pub fn combined_loss(contrastive: f64, cross: f64, lambda: f64) -> f64 {
    lambda * contrastive + (1.0 - lambda) * cross
}

pub fn multitask_loss(baseline: f64, addition: f64, lambda_mt: f64) -> f64 {
    (1.0 - lambda_mt) * baseline + lambda_mt * addition
}
