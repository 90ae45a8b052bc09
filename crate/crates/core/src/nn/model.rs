//! The two-branch CNN shared by both sides of the siamese pair.
//!
//! Each branch is conv1d -> batch norm -> ReLU -> max pool over the frame
//! axis. The pooled maps are flattened and concatenated (tap `pos_1`), then a
//! single fully connected layer produces the emotion logits (tap `pos_2`)
//! followed by softmax. An optional auxiliary head also reads `pos_1`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::features::FeatureMatrix;
use crate::error::{Result, SerError};
use crate::nn::layers::{
    bn_backward_into, bn_eval_forward_into, bn_train_forward_into, conv1d_backward_into,
    conv1d_into, conv1d_nobias_into, linear_into, maxpool_into, pool_out_len, softmax, BatchNorm1dParams,
    BnBatchStats, Conv1dParams, LinearParams, Mode,
};
use crate::nn::tensor::Tensor;
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchDims {
    pub filters: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Feature dimension `d` (13 or 26), the conv input channels.
    pub in_ch: usize,
    /// Frame count `s`.
    pub seq_len: usize,
    pub branch_a: BranchDims,
    pub branch_b: BranchDims,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub n_classes: usize,
    pub aux_classes: Option<usize>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelDims {
    /// 100 filters of width 13 (pad 6) and 100 of width 7 (pad 3), both
    /// max-pooled with kernel 30, stride 3.
    pub fn standard(in_ch: usize, seq_len: usize) -> ModelDims {
        ModelDims {
            in_ch,
            seq_len,
            branch_a: BranchDims {
                filters: 100,
                kernel: 13,
                padding: 6,
                stride: 1,
            },
            branch_b: BranchDims {
                filters: 100,
                kernel: 7,
                padding: 3,
                stride: 1,
            },
            pool_kernel: 30,
            pool_stride: 3,
            n_classes: 4,
            aux_classes: None,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// Reduced model for gradient checks: 13x40 input, 3 filters per branch,
    /// pool kernel 4 stride 2.
    pub fn tiny() -> ModelDims {
        let mut d = ModelDims::standard(13, 40);
        d.branch_a.filters = 3;
        d.branch_b.filters = 3;
        d.pool_kernel = 4;
        d.pool_stride = 2;
        d
    }

    pub fn with_aux(mut self, classes: Option<usize>) -> ModelDims {
        self.aux_classes = classes;
        self
    }

    pub fn conv_len(&self, b: &BranchDims) -> Option<usize> {
        let padded = self.seq_len + 2 * b.padding;
        (padded >= b.kernel && b.stride > 0).then(|| (padded - b.kernel) / b.stride + 1)
    }

    pub fn pool_len(&self, b: &BranchDims) -> Option<usize> {
        pool_out_len(self.conv_len(b)?, self.pool_kernel, self.pool_stride)
    }

    pub fn pos1_len(&self) -> usize {
        let part = |b: &BranchDims| b.filters * self.pool_len(b).unwrap_or(0);
        part(&self.branch_a) + part(&self.branch_b)
    }

    pub fn validate(&self) -> Result<()> {
        for b in [&self.branch_a, &self.branch_b] {
            if self.pool_len(b).is_none() || b.filters == 0 {
                return Err(SerError::Shape(format!(
                    "branch {b:?} cannot process {} frames with pool {}/{}",
                    self.seq_len, self.pool_kernel, self.pool_stride
                )));
            }
        }
        if self.n_classes < 2 || self.in_ch == 0 {
            return Err(SerError::Shape("need >= 2 classes and >= 1 input channel".into()));
        }
        Ok(())
    }
}

/// The single shared weight set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub conv_a: Conv1dParams,
    pub bn_a: BatchNorm1dParams,
    pub conv_b: Conv1dParams,
    pub bn_b: BatchNorm1dParams,
    pub fc: LinearParams,
    pub aux: Option<LinearParams>,
}

fn glorot(rng: &mut impl Rng, w: &mut [f64], fan_in: usize, fan_out: usize) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w.iter_mut() {
        *v = rng.random_range(-a..a);
    }
}

/// Glorot-uniform weights, zero biases, identity batch norm. The auxiliary
/// head draws from its own stream so adding it leaves the trunk unchanged.
pub fn init_params(seed: u64, dims: &ModelDims) -> Result<ModelParams> {
    dims.validate()?;
    let conv = |b: &BranchDims| Conv1dParams::zeros(b.filters, dims.in_ch, b.kernel, b.padding, b.stride);
    let mut conv_a = conv(&dims.branch_a);
    let mut conv_b = conv(&dims.branch_b);
    let p = dims.pos1_len();
    let mut fc = LinearParams::zeros(dims.n_classes, p);

    let mut rng = rng_for(seed, &[stream::INIT]);
    for c in [&mut conv_a, &mut conv_b] {
        let (fi, fo) = (c.in_ch * c.kernel, c.out_ch * c.kernel);
        glorot(&mut rng, &mut c.weights, fi, fo);
    }
    glorot(&mut rng, &mut fc.weights, p, dims.n_classes);

    let aux = dims.aux_classes.map(|k| {
        let mut head = LinearParams::zeros(k, p);
        glorot(&mut rng_for(seed, &[stream::INIT_AUX]), &mut head.weights, p, k);
        head
    });
    let bn = |b: &BranchDims| BatchNorm1dParams::new(b.filters, dims.bn_eps, dims.bn_momentum);
    Ok(ModelParams {
        bn_a: bn(&dims.branch_a),
        bn_b: bn(&dims.branch_b),
        dims: dims.clone(),
        conv_a,
        conv_b,
        fc,
        aux,
    })
}

impl ModelParams {
    /// Learnable arrays in canonical order: conv_a w/b, bn_a gamma/beta,
    /// conv_b w/b, bn_b gamma/beta, fc w/b, then aux w/b if present.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            &self.conv_a.weights,
            &self.conv_a.bias,
            &self.bn_a.gamma,
            &self.bn_a.beta,
            &self.conv_b.weights,
            &self.conv_b.bias,
            &self.bn_b.gamma,
            &self.bn_b.beta,
            &self.fc.weights,
            &self.fc.bias,
        ];
        if let Some(a) = &self.aux {
            v.push(&a.weights);
            v.push(&a.bias);
        }
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.conv_a.weights,
            &mut self.conv_a.bias,
            &mut self.bn_a.gamma,
            &mut self.bn_a.beta,
            &mut self.conv_b.weights,
            &mut self.conv_b.bias,
            &mut self.bn_b.gamma,
            &mut self.bn_b.beta,
            &mut self.fc.weights,
            &mut self.fc.bias,
        ];
        if let Some(a) = &mut self.aux {
            v.push(&mut a.weights);
            v.push(&mut a.bias);
        }
        v
    }

    pub fn param_count(&self) -> usize {
        self.trainable().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.trainable().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(SerError::Shape(format!(
                "flat vector has {} values, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for s in self.trainable_mut() {
            s.copy_from_slice(&flat[at..at + s.len()]);
            at += s.len();
        }
        Ok(())
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// running statistics.
    pub fn update_running_stats(&mut self, out: &ForwardOutput) {
        if let Some(cache) = &out.cache {
            self.bn_a.update_running(&cache.a.stats);
            self.bn_b.update_running(&cache.b.stats);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrad {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Accumulated gradient, shape-congruent with the learnable part of
/// [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv_a: LinearGrad,
    pub bn_a: BnGrad,
    pub conv_b: LinearGrad,
    pub bn_b: BnGrad,
    pub fc: LinearGrad,
    pub aux: Option<LinearGrad>,
}

impl Gradients {
    pub fn zeros_like(m: &ModelParams) -> Gradients {
        let lin = |w: &[f64], b: &[f64]| LinearGrad {
            weights: vec![0.0; w.len()],
            bias: vec![0.0; b.len()],
        };
        let bn = |p: &BatchNorm1dParams| BnGrad {
            gamma: vec![0.0; p.channels()],
            beta: vec![0.0; p.channels()],
        };
        Gradients {
            conv_a: lin(&m.conv_a.weights, &m.conv_a.bias),
            bn_a: bn(&m.bn_a),
            conv_b: lin(&m.conv_b.weights, &m.conv_b.bias),
            bn_b: bn(&m.bn_b),
            fc: lin(&m.fc.weights, &m.fc.bias),
            aux: m.aux.as_ref().map(|a| lin(&a.weights, &a.bias)),
        }
    }

    /// Same order as [`ModelParams::trainable`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![
            &self.conv_a.weights,
            &self.conv_a.bias,
            &self.bn_a.gamma,
            &self.bn_a.beta,
            &self.conv_b.weights,
            &self.conv_b.bias,
            &self.bn_b.gamma,
            &self.bn_b.beta,
            &self.fc.weights,
            &self.fc.bias,
        ];
        if let Some(a) = &self.aux {
            v.push(&a.weights);
            v.push(&a.bias);
        }
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            &mut self.conv_a.weights,
            &mut self.conv_a.bias,
            &mut self.bn_a.gamma,
            &mut self.bn_a.beta,
            &mut self.conv_b.weights,
            &mut self.conv_b.bias,
            &mut self.bn_b.gamma,
            &mut self.bn_b.beta,
            &mut self.fc.weights,
            &mut self.fc.bias,
        ];
        if let Some(a) = &mut self.aux {
            v.push(&mut a.weights);
            v.push(&mut a.bias);
        }
        v
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= f);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) struct BranchCache {
    xhat: Vec<f64>,
    /// Post-ReLU activations, `batch x filters x conv_len`.
    relu: Vec<f64>,
    pool_idx: Vec<u32>,
    inv_std: Vec<f64>,
    stats: BnBatchStats,
    conv_len: usize,
    pool_len: usize,
}

pub struct ForwardCache {
    inputs: Vec<f64>,
    a: BranchCache,
    b: BranchCache,
}

impl ForwardCache {
    pub fn bn_stats(&self) -> (&BnBatchStats, &BnBatchStats) {
        (&self.a.stats, &self.b.stats)
    }
}

pub struct ForwardOutput {
    pub batch: usize,
    /// Concatenated pooled features, `batch x pos1_len`.
    pub pos1: Tensor,
    /// Pre-softmax emotion scores, `batch x n_classes`.
    pub logits: Tensor,
    pub probs: Tensor,
    pub aux_logits: Option<Tensor>,
    /// Present after a train-mode pass.
    pub cache: Option<ForwardCache>,
}

/// Stacks feature matrices into a `batch x d x s` channel-major tensor.
pub fn batch_from_features(features: &[&FeatureMatrix]) -> Result<Tensor> {
    let first = features
        .first()
        .ok_or_else(|| SerError::InvalidArgument("empty batch".into()))?;
    let (s, d) = (first.frames, first.dim);
    let mut data = Vec::with_capacity(features.len() * s * d);
    for fm in features {
        if (fm.frames, fm.dim) != (s, d) {
            return Err(SerError::Shape(format!(
                "feature matrix {}x{} in a batch of {s}x{d}",
                fm.frames, fm.dim
            )));
        }
        data.extend(fm.to_channel_major());
    }
    Tensor::new(&[features.len(), d, s], data)
}

/// Per-sample multiply-adds below which waking the thread pool costs more
/// than it saves.
const PAR_MIN_WORK: usize = 1 << 16;

fn worth_parallel(per_sample_work: usize) -> bool {
    per_sample_work >= PAR_MIN_WORK
}

fn branch_forward(
    conv: &Conv1dParams,
    bn: &BatchNorm1dParams,
    dims: &ModelDims,
    bd: &BranchDims,
    inputs: &[f64],
    batch: usize,
    mode: Mode,
) -> (Vec<f64>, BranchCache) {
    let (in_ch, len) = (dims.in_ch, dims.seq_len);
    let conv_len = dims.conv_len(bd).expect("validated dims");
    let pool_len = dims.pool_len(bd).expect("validated dims");
    let f = bd.filters;
    let mut conv_out = vec![0.0; batch * f * conv_len];
    // Batch statistics cancel a per-channel bias exactly, so train mode
    // leaves it out of the normalized values and adds it back to the mean.
    let with_bias = mode == Mode::Eval;
    let conv_one = |(out, x): (&mut [f64], &[f64])| {
        if with_bias {
            conv1d_into(conv, x, len, out)
        } else {
            conv1d_nobias_into(conv, x, len, out)
        }
    };
    if worth_parallel(f * conv_len * in_ch * bd.kernel) {
        conv_out.par_chunks_mut(f * conv_len).zip(inputs.par_chunks(in_ch * len)).for_each(conv_one);
    } else {
        conv_out.chunks_mut(f * conv_len).zip(inputs.chunks(in_ch * len)).for_each(conv_one);
    }

    let mut y = vec![0.0; conv_out.len()];
    let (xhat, inv_std, stats) = match mode {
        Mode::Train => {
            let mut xhat = vec![0.0; conv_out.len()];
            let (mut stats, inv_std) =
                bn_train_forward_into(bn, &conv_out, batch, conv_len, &mut xhat, &mut y);
            stats.mean.iter_mut().zip(&conv.bias).for_each(|(m, b)| *m += b);
            (xhat, inv_std, stats)
        }
        Mode::Eval => {
            bn_eval_forward_into(bn, &conv_out, conv_len, &mut y);
            let empty = BnBatchStats {
                mean: Vec::new(),
                var: Vec::new(),
                count: 0,
            };
            (Vec::new(), Vec::new(), empty)
        }
    };
    drop(conv_out);
    y.iter_mut().for_each(|v| *v = v.max(0.0));

    let mut pooled = vec![0.0; batch * f * pool_len];
    let mut pool_idx = vec![0u32; pooled.len()];
    pooled
        .chunks_mut(f * pool_len)
        .zip(pool_idx.chunks_mut(f * pool_len))
        .zip(y.chunks(f * conv_len))
        .for_each(|((out, idx), r)| {
            maxpool_into(r, conv_len, dims.pool_kernel, dims.pool_stride, out, idx)
        });
    let cache = BranchCache {
        xhat,
        relu: y,
        pool_idx,
        inv_std,
        stats,
        conv_len,
        pool_len,
    };
    (pooled, cache)
}

/// Runs both branches on `inputs` (`batch x d x s`). Train mode uses batch
/// statistics and keeps the cache for [`backward`]; it never touches the
/// running statistics (see [`ModelParams::update_running_stats`]).
pub fn forward(model: &ModelParams, inputs: &Tensor, mode: Mode) -> Result<ForwardOutput> {
    let dims = &model.dims;
    let (batch, ch, len) = inputs.dims3()?;
    if ch != dims.in_ch || len != dims.seq_len {
        return Err(SerError::Shape(format!(
            "model expects {}x{} inputs, got {ch}x{len}",
            dims.in_ch, dims.seq_len
        )));
    }
    if batch == 0 {
        return Err(SerError::InvalidArgument("empty batch".into()));
    }
    let x = inputs.data();
    let (pa, ca) = branch_forward(&model.conv_a, &model.bn_a, dims, &dims.branch_a, x, batch, mode);
    let (pb, cb) = branch_forward(&model.conv_b, &model.bn_b, dims, &dims.branch_b, x, batch, mode);

    let (na, nb) = (pa.len() / batch, pb.len() / batch);
    let p = na + nb;
    let mut pos1 = Vec::with_capacity(batch * p);
    for i in 0..batch {
        pos1.extend_from_slice(&pa[i * na..(i + 1) * na]);
        pos1.extend_from_slice(&pb[i * nb..(i + 1) * nb]);
    }
    let k = dims.n_classes;
    let mut logits = vec![0.0; batch * k];
    let mut probs = Vec::with_capacity(batch * k);
    for (i, out) in logits.chunks_exact_mut(k).enumerate() {
        linear_into(&model.fc, &pos1[i * p..(i + 1) * p], out);
        probs.extend(softmax(out));
    }
    let aux_logits = match &model.aux {
        Some(head) => {
            let mut v = vec![0.0; batch * head.n_out];
            for (i, out) in v.chunks_exact_mut(head.n_out).enumerate() {
                linear_into(head, &pos1[i * p..(i + 1) * p], out);
            }
            Some(Tensor::new(&[batch, head.n_out], v)?)
        }
        None => None,
    };
    let cache = (mode == Mode::Train).then(|| ForwardCache {
        inputs: x.to_vec(),
        a: ca,
        b: cb,
    });
    Ok(ForwardOutput {
        batch,
        pos1: Tensor::new(&[batch, p], pos1)?,
        logits: Tensor::new(&[batch, k], logits)?,
        probs: Tensor::new(&[batch, k], probs)?,
        aux_logits,
        cache,
    })
}

fn head_backward(head: &LinearParams, pos1: &[f64], d_out: &[f64], g_pos1: &mut [f64]) -> LinearGrad {
    let p = head.n_in;
    let k = head.n_out;
    let mut grad = LinearGrad {
        weights: vec![0.0; head.weights.len()],
        bias: vec![0.0; k],
    };
    for (i, d) in d_out.chunks_exact(k).enumerate() {
        let x = &pos1[i * p..(i + 1) * p];
        let gx = &mut g_pos1[i * p..(i + 1) * p];
        for (c, &g) in d.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[c] += g;
            let w = &head.weights[c * p..(c + 1) * p];
            let dw = &mut grad.weights[c * p..(c + 1) * p];
            for ((dwv, xv), (gxv, wv)) in dw.iter_mut().zip(x).zip(gx.iter_mut().zip(w)) {
                *dwv += g * xv;
                *gxv += g * wv;
            }
        }
    }
    grad
}

#[allow(clippy::too_many_arguments)]
fn branch_backward(
    conv: &Conv1dParams,
    bn: &BatchNorm1dParams,
    cache: &BranchCache,
    inputs: &[f64],
    in_ch: usize,
    len: usize,
    g_pos1: &[f64],
    offset: usize,
    batch: usize,
) -> (LinearGrad, BnGrad) {
    let f = conv.out_ch;
    let (cl, pl) = (cache.conv_len, cache.pool_len);
    let p_total = g_pos1.len() / batch;
    // Pool + ReLU backward.
    let mut dy = vec![0.0; batch * f * cl];
    dy.chunks_mut(f * cl).enumerate().for_each(|(i, d)| {
        let g = &g_pos1[i * p_total + offset..i * p_total + offset + f * pl];
        let idx = &cache.pool_idx[i * f * pl..(i + 1) * f * pl];
        let r = &cache.relu[i * f * cl..(i + 1) * f * cl];
        for c in 0..f {
            for t in 0..pl {
                let pos = c * cl + idx[c * pl + t] as usize;
                if r[pos] > 0.0 {
                    d[pos] += g[c * pl + t];
                }
            }
        }
    });
    let mut dx = vec![0.0; dy.len()];
    let (gamma, beta) = bn_backward_into(bn, &cache.xhat, &dy, &cache.inv_std, batch, cl, &mut dx);
    drop(dy);
    let grad_one = |(dout, x): (&[f64], &[f64])| {
        let mut dw = vec![0.0; conv.weights.len()];
        let mut db = vec![0.0; f];
        conv1d_backward_into(conv, x, len, dout, &mut dw, &mut db, None);
        (dw, db)
    };
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = if worth_parallel(f * cl * in_ch * conv.kernel) {
        dx.par_chunks(f * cl).zip(inputs.par_chunks(in_ch * len)).map(grad_one).collect()
    } else {
        dx.chunks(f * cl).zip(inputs.chunks(in_ch * len)).map(grad_one).collect()
    };
    // Summed in batch order so the result does not depend on thread count.
    let mut grad = LinearGrad {
        weights: vec![0.0; conv.weights.len()],
        bias: vec![0.0; f],
    };
    for (dw, db) in &per_sample {
        grad.weights.iter_mut().zip(dw).for_each(|(a, b)| *a += b);
        grad.bias.iter_mut().zip(db).for_each(|(a, b)| *a += b);
    }
    (grad, BnGrad { gamma, beta })
}

/// Exact gradient of a loss whose upstream gradients are injected at
/// `pos_1`, at the logits and at the auxiliary logits simultaneously.
pub fn backward(
    model: &ModelParams,
    out: &ForwardOutput,
    d_pos1: Option<&Tensor>,
    d_logits: Option<&Tensor>,
    d_aux: Option<&Tensor>,
) -> Result<Gradients> {
    let cache = out
        .cache
        .as_ref()
        .ok_or_else(|| SerError::InvalidArgument("backward needs a train-mode forward cache".into()))?;
    let dims = &model.dims;
    let batch = out.batch;
    let pos1 = out.pos1.data();
    let mut g_pos1 = match d_pos1 {
        Some(t) if t.shape() == out.pos1.shape() => t.data().to_vec(),
        Some(t) => {
            return Err(SerError::Shape(format!(
                "d_pos1 shape {:?} vs pos1 {:?}",
                t.shape(),
                out.pos1.shape()
            )))
        }
        None => vec![0.0; pos1.len()],
    };
    let mut grads = Gradients::zeros_like(model);
    if let Some(d) = d_logits {
        if d.shape() != out.logits.shape() {
            return Err(SerError::Shape("d_logits shape mismatch".into()));
        }
        grads.fc = head_backward(&model.fc, pos1, d.data(), &mut g_pos1);
    }
    if let Some(d) = d_aux {
        let head = model
            .aux
            .as_ref()
            .ok_or_else(|| SerError::InvalidArgument("model has no auxiliary head".into()))?;
        if d.shape() != [batch, head.n_out] {
            return Err(SerError::Shape("d_aux shape mismatch".into()));
        }
        grads.aux = Some(head_backward(head, pos1, d.data(), &mut g_pos1));
    }
    let offset_b = dims.branch_a.filters * cache.a.pool_len;
    let (ca, ba) = branch_backward(
        &model.conv_a,
        &model.bn_a,
        &cache.a,
        &cache.inputs,
        dims.in_ch,
        dims.seq_len,
        &g_pos1,
        0,
        batch,
    );
    let (cb, bb) = branch_backward(
        &model.conv_b,
        &model.bn_b,
        &cache.b,
        &cache.inputs,
        dims.in_ch,
        dims.seq_len,
        &g_pos1,
        offset_b,
        batch,
    );
    grads.conv_a = ca;
    grads.bn_a = ba;
    grads.conv_b = cb;
    grads.bn_b = bb;
    Ok(grads)
}
