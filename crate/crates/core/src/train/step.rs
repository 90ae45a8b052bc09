//! One siamese update: both sides through the single shared weight set.

use rand::Rng;

use crate::error::{Result, SerError};
use crate::losses::{combined_loss, cross_entropy_with_logits, multitask_loss, pairwise_batch_loss, LossConfig, LossType, MultiTaskConfig, Position};
use crate::nn::gradcheck::{finite_diff_check, GradCheckReport};
use crate::nn::layers::Mode;
use crate::nn::model::{backward, forward, init_params, ForwardOutput, Gradients, ModelDims, ModelParams};
use crate::seed::{rng_for, stream};
use crate::nn::tensor::Tensor;
use crate::train::data::PairBatch;

pub struct StepOutput {
    /// Total objective.
    pub loss: f64,
    /// Emotion cross-entropy, mean over both sides.
    pub cross_entropy: f64,
    /// `None` when the contrastive term was skipped.
    pub contrastive: Option<f64>,
    pub aux: Option<f64>,
    /// Pairs whose cosine hit the zero-norm guard.
    pub degenerate_pairs: usize,
    pub grads: Gradients,
    /// Train-mode outputs of each side, for the running statistics.
    pub sides: [ForwardOutput; 2],
}

fn scaled(t: &Tensor, f: f64) -> Tensor {
    let mut t = t.clone();
    t.data_mut().iter_mut().for_each(|v| *v *= f);
    t
}

fn add_into(dst: &mut Tensor, src: &Tensor, f: f64) {
    dst.data_mut().iter_mut().zip(src.data()).for_each(|(a, b)| *a += f * b);
}

/// Loss and gradient of one pair batch. With an active auxiliary task the
/// contrastive term is off and the objective is
/// `(1 - lambda_mt) * CE + lambda_mt * CE_aux`; otherwise it is
/// `lambda * contrastive + (1 - lambda) * CE`, and `lambda = 0` never
/// evaluates the contrastive function.
pub fn siamese_step(model: &ModelParams, batch: &PairBatch, loss: &LossConfig, mt: &MultiTaskConfig) -> Result<StepOutput> {
    let o = siamese_objective(model, batch, loss, mt)?;
    let [out1, out2] = o.sides;
    let [dp1, dp2] = o.d_pos1;
    let [dl1, dl2] = o.d_logits;
    let [da1, da2] = o.d_aux;
    let mut grads = backward(model, &out1, dp1.as_ref(), Some(&dl1), da1.as_ref())?;
    grads.add_assign(&backward(model, &out2, dp2.as_ref(), Some(&dl2), da2.as_ref())?);
    Ok(StepOutput {
        loss: o.loss,
        cross_entropy: o.cross_entropy,
        contrastive: o.contrastive,
        aux: o.aux,
        degenerate_pairs: o.degenerate_pairs,
        grads,
        sides: [out1, out2],
    })
}

/// Forward half of a step: the objective and its gradients with respect to
/// each side's taps.
pub struct Objective {
    pub loss: f64,
    pub cross_entropy: f64,
    pub contrastive: Option<f64>,
    pub aux: Option<f64>,
    pub degenerate_pairs: usize,
    pub sides: [ForwardOutput; 2],
    pub d_pos1: [Option<Tensor>; 2],
    pub d_logits: [Tensor; 2],
    pub d_aux: [Option<Tensor>; 2],
}

pub fn siamese_objective(model: &ModelParams, batch: &PairBatch, loss: &LossConfig, mt: &MultiTaskConfig) -> Result<Objective> {
    if batch.is_empty() {
        return Err(SerError::InvalidArgument("empty pair batch".into()));
    }
    if mt.is_active() && loss.lambda > 0.0 {
        return Err(SerError::InvalidArgument(
            "multi-task training runs without the contrastive term".into(),
        ));
    }
    let out1 = forward(model, &batch.x1, Mode::Train)?;
    let out2 = forward(model, &batch.x2, Mode::Train)?;
    let (ce1, g1) = cross_entropy_with_logits(&out1.logits, &batch.class1)?;
    let (ce2, g2) = cross_entropy_with_logits(&out2.logits, &batch.class2)?;
    let cross_entropy = 0.5 * (ce1 + ce2);
    let ce_weight = if mt.is_active() { 1.0 - mt.lambda_mt } else { 1.0 - loss.lambda };
    let mut dl1 = scaled(&g1, 0.5 * ce_weight);
    let mut dl2 = scaled(&g2, 0.5 * ce_weight);
    let (mut dp1, mut dp2) = (None, None);

    let mut contrastive = None;
    let mut degenerate_pairs = 0;
    if !mt.is_active() && loss.lambda > 0.0 {
        let (t1, t2) = match loss.position {
            Position::Pooled => (&out1.pos1, &out2.pos1),
            Position::Logits => (&out1.logits, &out2.logits),
        };
        let pl = pairwise_batch_loss(t1, t2, &batch.positive, loss)?;
        match loss.position {
            Position::Pooled => {
                dp1 = Some(scaled(&pl.d1, loss.lambda));
                dp2 = Some(scaled(&pl.d2, loss.lambda));
            }
            Position::Logits => {
                add_into(&mut dl1, &pl.d1, loss.lambda);
                add_into(&mut dl2, &pl.d2, loss.lambda);
            }
        }
        contrastive = Some(pl.value);
        degenerate_pairs = pl.degenerate;
    }

    let mut aux = None;
    let (mut da1, mut da2) = (None, None);
    if mt.is_active() {
        let (l1, l2) = match (&out1.aux_logits, &out2.aux_logits, &batch.aux1, &batch.aux2) {
            (Some(z1), Some(z2), Some(a1), Some(a2)) => (cross_entropy_with_logits(z1, a1)?, cross_entropy_with_logits(z2, a2)?),
            _ => return Err(SerError::InvalidArgument("auxiliary task needs an auxiliary head and labels".into())),
        };
        aux = Some(0.5 * (l1.0 + l2.0));
        if mt.lambda_mt > 0.0 {
            da1 = Some(scaled(&l1.1, 0.5 * mt.lambda_mt));
            da2 = Some(scaled(&l2.1, 0.5 * mt.lambda_mt));
        }
    }

    let total = match (aux, contrastive) {
        (Some(a), _) => multitask_loss(cross_entropy, a, mt.lambda_mt),
        (None, Some(c)) => combined_loss(c, cross_entropy, loss.lambda),
        (None, None) => combined_loss(0.0, cross_entropy, loss.lambda),
    };
    Ok(Objective {
        loss: total,
        cross_entropy,
        contrastive,
        aux,
        degenerate_pairs,
        sides: [out1, out2],
        d_pos1: [dp1, dp2],
        d_logits: [dl1, dl2],
        d_aux: [da1, da2],
    })
}

/// Pairs in the random batch of [`gradcheck_step`].
pub const GRADCHECK_PAIRS: usize = 4;

/// Checks every analytic gradient of the full siamese objective against
/// central differences on the reduced model, with random inputs, labels and
/// weights drawn from `seed`.
pub fn gradcheck_step(seed: u64, loss: &LossConfig, h: f64) -> Result<GradCheckReport> {
    let dims = ModelDims::tiny();
    let mut model = init_params(seed, &dims)?;
    let mut rng = rng_for(seed, &[stream::INIT, 99]);
    // Nonzero biases and BN affine terms so their gradients are exercised.
    for b in [&mut model.conv_a.bias, &mut model.conv_b.bias, &mut model.fc.bias, &mut model.bn_a.beta, &mut model.bn_b.beta] {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
    for g in [&mut model.bn_a.gamma, &mut model.bn_b.gamma] {
        g.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
    }
    let per = dims.in_ch * dims.seq_len;
    let mut side = || {
        let data: Vec<f64> = (0..GRADCHECK_PAIRS * per).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(&[GRADCHECK_PAIRS, dims.in_ch, dims.seq_len], data)
    };
    let (x1, x2) = (side()?, side()?);
    // Alternate positive and negative pairs over all four classes.
    let class1: Vec<usize> = (0..GRADCHECK_PAIRS).map(|i| i % 4).collect();
    let class2: Vec<usize> = (0..GRADCHECK_PAIRS).map(|i| if i % 2 == 0 { i % 4 } else { (i + 1) % 4 }).collect();
    let batch = PairBatch {
        positive: class1.iter().zip(&class2).map(|(a, b)| a == b).collect(),
        x1,
        x2,
        class1,
        class2,
        aux1: None,
        aux2: None,
    };
    let mt = MultiTaskConfig::default();
    let analytic = siamese_step(&model, &batch, loss, &mt)?.grads.flatten();
    let mut probe = model.clone();
    let mut failure = None;
    let report = finite_diff_check(
        |w| {
            probe.set_flat(w).expect("same length");
            match siamese_objective(&probe, &batch, loss, &mt) {
                Ok(s) => s.loss,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &model.flatten(),
        &analytic,
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// One configuration of [`gradcheck_grid`].
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub seed: u64,
    pub loss_type: LossType,
    pub position: Position,
    pub lambda: f64,
    pub report: GradCheckReport,
}

/// Weights covered by [`gradcheck_grid`]: cross-entropy only, an even mix
/// and contrastive only.
pub const GRADCHECK_LAMBDAS: [f64; 3] = [0.0, 0.5, 1.0];

/// [`gradcheck_step`] for every seed, loss type, position and weight.
pub fn gradcheck_grid(seeds: std::ops::Range<u64>, h: f64) -> Result<Vec<GradCheckCase>> {
    let mut cases = Vec::new();
    for seed in seeds {
        for loss_type in [LossType::Cosine, LossType::Euclidean] {
            for position in [Position::Pooled, Position::Logits] {
                for lambda in GRADCHECK_LAMBDAS {
                    let cfg = LossConfig {
                        lambda,
                        loss_type,
                        position,
                        ..LossConfig::default()
                    };
                    cases.push(GradCheckCase {
                        seed,
                        loss_type,
                        position,
                        lambda,
                        report: gradcheck_step(seed, &cfg, h)?,
                    });
                }
            }
        }
    }
    Ok(cases)
}
