//! Layer primitives with hand-written backward passes.
//!
//! The `*_into` kernels work on flat slices and are what the model uses; the
//! tensor-level functions wrap them with shape checks.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SerError};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

// ---------------------------------------------------------------------------
// conv1d

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1dParams {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
    /// `out_ch x in_ch x kernel`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1dParams {
    pub fn zeros(out_ch: usize, in_ch: usize, kernel: usize, padding: usize, stride: usize) -> Self {
        Conv1dParams {
            out_ch,
            in_ch,
            kernel,
            padding,
            stride,
            weights: vec![0.0; out_ch * in_ch * kernel],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Output positions `t` whose tap `j` lands inside the unpadded input, and
    /// the input index of the first one. Stride 1 only.
    #[inline]
    fn tap_range(&self, j: usize, len: usize, out_len: usize) -> Option<(usize, usize, usize)> {
        let shift = j as isize - self.padding as isize;
        let t0 = (-shift).max(0) as usize;
        let t1 = (len as isize - shift).clamp(0, out_len as isize) as usize;
        (t0 < t1).then(|| (t0, t1, (t0 as isize + shift) as usize))
    }
}

/// Unrolls one `in_ch x len` sample into `col` (`(in_ch * kernel) x out_len`)
/// so the convolution becomes a single matrix product. Padding reads as 0.
fn im2col(p: &Conv1dParams, x: &[f64], len: usize, out_len: usize, col: &mut [f64]) {
    for i in 0..p.in_ch {
        let xrow = &x[i * len..(i + 1) * len];
        for j in 0..p.kernel {
            let crow = &mut col[(i * p.kernel + j) * out_len..(i * p.kernel + j + 1) * out_len];
            if p.stride == 1 {
                crow.fill(0.0);
                if let Some((t0, t1, s0)) = p.tap_range(j, len, out_len) {
                    crow[t0..t1].copy_from_slice(&xrow[s0..s0 + (t1 - t0)]);
                }
            } else {
                for (t, c) in crow.iter_mut().enumerate() {
                    let s = (t * p.stride + j) as isize - p.padding as isize;
                    *c = if s >= 0 && (s as usize) < len { xrow[s as usize] } else { 0.0 };
                }
            }
        }
    }
}

/// Scatter-adds `dcol` back onto `dx`, the adjoint of [`im2col`].
fn col2im(p: &Conv1dParams, dcol: &[f64], len: usize, out_len: usize, dx: &mut [f64]) {
    for i in 0..p.in_ch {
        for j in 0..p.kernel {
            let crow = &dcol[(i * p.kernel + j) * out_len..(i * p.kernel + j + 1) * out_len];
            for (t, &g) in crow.iter().enumerate() {
                let s = (t * p.stride + j) as isize - p.padding as isize;
                if s >= 0 && (s as usize) < len {
                    dx[i * len + s as usize] += g;
                }
            }
        }
    }
}

/// Products below this many multiply-adds skip the packed kernel, whose
/// per-call setup dominates at small sizes.
const SMALL_GEMM: usize = 1 << 16;

#[allow(clippy::too_many_arguments)]
fn gemm_direct(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (isize, isize),
    b: &[f64],
    sb: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { gemm_direct_avx2(m, k, n, a, sa, b, sb, beta, c) };
    }
    gemm_direct_body(m, k, n, a, sa, b, sb, beta, c)
}

/// Wider vectors only; Rust never contracts `a * b + c` into a fused
/// multiply-add, so results match the generic build bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_direct_avx2(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (isize, isize),
    b: &[f64],
    sb: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    gemm_direct_body(m, k, n, a, sa, b, sb, beta, c)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_direct_body(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa, rsb, csb) = (rsa as usize, csa as usize, rsb as usize, csb as usize);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        if beta == 0.0 {
            crow.fill(0.0);
        } else if beta != 1.0 {
            crow.iter_mut().for_each(|v| *v *= beta);
        }
        if csb == 1 {
            // Rows of `b` are contiguous: accumulate scaled rows, four at a
            // time to cut traffic on `crow`.
            let row = |l: usize| &b[l * rsb..l * rsb + n];
            let coef = |l: usize| a[i * rsa + l * csa];
            let mut l = 0;
            while l + 4 <= k {
                let (a0, a1, a2, a3) = (coef(l), coef(l + 1), coef(l + 2), coef(l + 3));
                let (b0, b1, b2, b3) = (row(l), row(l + 1), row(l + 2), row(l + 3));
                for ((((cv, x0), x1), x2), x3) in crow.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3) {
                    *cv += (a0 * x0 + a1 * x1) + (a2 * x2 + a3 * x3);
                }
                l += 4;
            }
            for l in l..k {
                let ail = coef(l);
                crow.iter_mut().zip(row(l)).for_each(|(cv, bv)| *cv += ail * bv);
            }
        } else if rsb == 1 && csa == 1 {
            // Columns of `b` and rows of `a` are contiguous: dot products.
            let arow = &a[i * rsa..i * rsa + k];
            for (j, cv) in crow.iter_mut().enumerate() {
                let bcol = &b[j * csb..j * csb + k];
                *cv += arow.iter().zip(bcol).map(|(x, y)| x * y).sum::<f64>();
            }
        } else {
            for l in 0..k {
                let ail = a[i * rsa + l * csa];
                for (j, cv) in crow.iter_mut().enumerate() {
                    *cv += ail * b[l * rsb + j * csb];
                }
            }
        }
    }
}

/// `c (m x n) = beta * c + a (m x k) * b (k x n)`, where `a` and `b` are given
/// by row and column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() as isize > (m as isize - 1) * rsa + (k as isize - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() as isize > (k as isize - 1) * rsb + (n as isize - 1) * csb);
    if m * k * n <= SMALL_GEMM {
        return gemm_direct(m, k, n, a, (rsa, csa), b, (rsb, csb), beta, c);
    }
    // SAFETY: the strides address only elements inside `a`, `b` and `c`,
    // whose bounds are asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation of one `in_ch x len` sample into `out` (`out_ch x out_len`).
pub(crate) fn conv1d_into(p: &Conv1dParams, x: &[f64], len: usize, out: &mut [f64]) {
    conv1d_into_impl(p, x, len, out, true)
}

/// As [`conv1d_into`] but without the bias term.
pub(crate) fn conv1d_nobias_into(p: &Conv1dParams, x: &[f64], len: usize, out: &mut [f64]) {
    conv1d_into_impl(p, x, len, out, false)
}

thread_local! {
    static COL_SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` on a per-thread buffer of `n` values. Contents are unspecified;
/// every caller overwrites the whole buffer before reading it.
fn with_col_scratch<R>(n: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    COL_SCRATCH.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < n {
            buf.resize(n, 0.0);
        }
        f(&mut buf[..n])
    })
}

fn conv1d_into_impl(p: &Conv1dParams, x: &[f64], len: usize, out: &mut [f64], bias: bool) {
    let ol = out.len() / p.out_ch;
    let ck = p.in_ch * p.kernel;
    with_col_scratch(ck * ol, |col| {
        im2col(p, x, len, ol, col);
        for (o, row) in out.chunks_exact_mut(ol).enumerate() {
            row.fill(if bias { p.bias[o] } else { 0.0 });
        }
        gemm(p.out_ch, ck, ol, &p.weights, (ck as isize, 1), col, (ol as isize, 1), 1.0, out);
    })
}

/// Accumulates `dw`, `db` and optionally `dx` for one sample.
pub(crate) fn conv1d_backward_into(
    p: &Conv1dParams,
    x: &[f64],
    len: usize,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let ol = dout.len() / p.out_ch;
    let ck = p.in_ch * p.kernel;
    for (o, drow) in dout.chunks_exact(ol).enumerate() {
        db[o] += drow.iter().sum::<f64>();
    }
    with_col_scratch(ck * ol, |col| {
        im2col(p, x, len, ol, col);
        // dw += dout * col^T
        gemm(p.out_ch, ol, ck, dout, (ol as isize, 1), col, (1, ol as isize), 1.0, dw);
        if let Some(dx) = dx {
            // dcol = w^T * dout; beta = 0 overwrites the buffer.
            gemm(ck, p.out_ch, ol, &p.weights, (1, ck as isize), dout, (ol as isize, 1), 0.0, col);
            col2im(p, col, len, ol, dx);
        }
    })
}

/// `x` is `in_ch x L`; returns `out_ch x L'`.
pub fn conv1d(x: &Tensor, p: &Conv1dParams) -> Result<Tensor> {
    let (ch, len) = x.dims2()?;
    if ch != p.in_ch {
        return Err(SerError::Shape(format!("conv expects {} channels, got {ch}", p.in_ch)));
    }
    let ol = p
        .out_len(len)
        .ok_or_else(|| SerError::Shape(format!("input length {len} shorter than kernel")))?;
    let mut out = Tensor::zeros(&[p.out_ch, ol]);
    conv1d_into(p, x.data(), len, out.data_mut());
    Ok(out)
}

pub struct Conv1dGrads {
    pub dx: Tensor,
    pub dweights: Vec<f64>,
    pub dbias: Vec<f64>,
}

pub fn conv1d_backward(x: &Tensor, p: &Conv1dParams, dout: &Tensor) -> Result<Conv1dGrads> {
    let (_, len) = x.dims2()?;
    let mut dx = Tensor::zeros(x.shape());
    let mut dweights = vec![0.0; p.weights.len()];
    let mut dbias = vec![0.0; p.out_ch];
    conv1d_backward_into(
        p,
        x.data(),
        len,
        dout.data(),
        &mut dweights,
        &mut dbias,
        Some(dx.data_mut()),
    );
    Ok(Conv1dGrads {
        dx,
        dweights,
        dbias,
    })
}

// ---------------------------------------------------------------------------
// batch norm

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm1dParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm1dParams {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm1dParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Exponential moving update from one training batch. The running
    /// variance tracks the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BnBatchStats) {
        let m = self.momentum;
        let n = stats.count as f64;
        let correction = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * stats.mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * stats.var[c] * correction;
        }
    }
}

/// Per-channel batch statistics from a training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Elements per channel, `batch * len`.
    pub count: usize,
}

/// Normalizes `x` (`batch x ch x len`) with batch statistics, writing the
/// normalized values to `xhat` and the affine output to `y`.
pub(crate) fn bn_train_forward_into(
    p: &BatchNorm1dParams,
    x: &[f64],
    batch: usize,
    len: usize,
    xhat: &mut [f64],
    y: &mut [f64],
) -> (BnBatchStats, Vec<f64>) {
    let ch = p.channels();
    let count = batch * len;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for c in 0..ch {
        let mut s = 0.0;
        for b in 0..batch {
            let at = (b * ch + c) * len;
            s += x[at..at + len].iter().sum::<f64>();
        }
        let mu = s / count as f64;
        let mut v = 0.0;
        for b in 0..batch {
            let at = (b * ch + c) * len;
            v += x[at..at + len].iter().map(|t| (t - mu) * (t - mu)).sum::<f64>();
        }
        mean[c] = mu;
        var[c] = v / count as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.eps).sqrt()).collect();
    for b in 0..batch {
        for c in 0..ch {
            let at = (b * ch + c) * len;
            let (mu, is, g, be) = (mean[c], inv_std[c], p.gamma[c], p.beta[c]);
            for t in at..at + len {
                let h = (x[t] - mu) * is;
                xhat[t] = h;
                y[t] = g * h + be;
            }
        }
    }
    (BnBatchStats { mean, var, count }, inv_std)
}

pub(crate) fn bn_eval_forward_into(p: &BatchNorm1dParams, x: &[f64], len: usize, y: &mut [f64]) {
    let ch = p.channels();
    for (row, (xs, ys)) in x.chunks_exact(len).zip(y.chunks_exact_mut(len)).enumerate() {
        let c = row % ch;
        let is = 1.0 / (p.running_var[c] + p.eps).sqrt();
        let (mu, g, be) = (p.running_mean[c], p.gamma[c], p.beta[c]);
        for (yv, xv) in ys.iter_mut().zip(xs) {
            *yv = g * (xv - mu) * is + be;
        }
    }
}

/// Train-mode backward. Writes `dx` and returns `(dgamma, dbeta)`.
pub(crate) fn bn_backward_into(
    p: &BatchNorm1dParams,
    xhat: &[f64],
    dy: &[f64],
    inv_std: &[f64],
    batch: usize,
    len: usize,
    dx: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let ch = p.channels();
    let n = (batch * len) as f64;
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for c in 0..ch {
        let (mut sg, mut sb) = (0.0, 0.0);
        for b in 0..batch {
            let at = (b * ch + c) * len;
            for t in at..at + len {
                sb += dy[t];
                sg += dy[t] * xhat[t];
            }
        }
        dgamma[c] = sg;
        dbeta[c] = sb;
    }
    for c in 0..ch {
        let scale = p.gamma[c] * inv_std[c];
        let (mean_dy, mean_dyx) = (dbeta[c] / n, dgamma[c] / n);
        for b in 0..batch {
            let at = (b * ch + c) * len;
            for t in at..at + len {
                dx[t] = scale * (dy[t] - mean_dy - xhat[t] * mean_dyx);
            }
        }
    }
    (dgamma, dbeta)
}

pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub stats: BnBatchStats,
}

/// `x` is `batch x ch x len`. Train mode normalizes with batch statistics
/// and updates the running statistics; eval mode uses the running ones.
pub fn batchnorm1d(
    x: &Tensor,
    p: &mut BatchNorm1dParams,
    mode: Mode,
) -> Result<(Tensor, Option<BnCache>)> {
    let (batch, ch, len) = x.dims3()?;
    if ch != p.channels() {
        return Err(SerError::Shape(format!(
            "batch norm has {} channels, input has {ch}",
            p.channels()
        )));
    }
    let mut y = Tensor::zeros(x.shape());
    match mode {
        Mode::Eval => {
            bn_eval_forward_into(p, x.data(), len, y.data_mut());
            Ok((y, None))
        }
        Mode::Train => {
            if batch * len < 2 {
                return Err(SerError::InvalidArgument(
                    "train-mode batch norm needs at least 2 values per channel".into(),
                ));
            }
            let mut xhat = Tensor::zeros(x.shape());
            let (stats, inv_std) =
                bn_train_forward_into(p, x.data(), batch, len, xhat.data_mut(), y.data_mut());
            p.update_running(&stats);
            Ok((
                y,
                Some(BnCache {
                    xhat,
                    inv_std,
                    stats,
                }),
            ))
        }
    }
}

pub fn batchnorm1d_backward(
    dy: &Tensor,
    cache: &BnCache,
    p: &BatchNorm1dParams,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (batch, _, len) = dy.dims3()?;
    let mut dx = Tensor::zeros(dy.shape());
    let (dg, db) = bn_backward_into(
        p,
        cache.xhat.data(),
        dy.data(),
        &cache.inv_std,
        batch,
        len,
        dx.data_mut(),
    );
    Ok((dx, dg, db))
}

// ---------------------------------------------------------------------------
// relu

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Subgradient at 0 is 0.
pub fn relu_backward(dout: &Tensor, x: &Tensor) -> Tensor {
    let data = dout
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

// ---------------------------------------------------------------------------
// max pool

pub fn pool_out_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (len >= kernel && kernel > 0 && stride > 0).then(|| (len - kernel) / stride + 1)
}

/// Window max per row; `idx` receives the in-row position of the first
/// maximal element of each window.
pub(crate) fn maxpool_into(
    x: &[f64],
    len: usize,
    kernel: usize,
    stride: usize,
    out: &mut [f64],
    idx: &mut [u32],
) {
    let ol = (len - kernel) / stride + 1;
    for (r, xrow) in x.chunks_exact(len).enumerate() {
        for t in 0..ol {
            let start = t * stride;
            let mut best = start;
            let mut bv = xrow[start];
            for (k, &v) in xrow[start + 1..start + kernel].iter().enumerate() {
                if v > bv {
                    bv = v;
                    best = start + 1 + k;
                }
            }
            out[r * ol + t] = bv;
            idx[r * ol + t] = best as u32;
        }
    }
}

/// `x` is `ch x len`; returns pooled values and argmax indices within each row.
pub fn maxpool1d(x: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, Vec<u32>)> {
    let (ch, len) = x.dims2()?;
    let ol = pool_out_len(len, kernel, stride).ok_or_else(|| {
        SerError::Shape(format!("pool input length {len} shorter than kernel {kernel}"))
    })?;
    let mut out = Tensor::zeros(&[ch, ol]);
    let mut idx = vec![0u32; ch * ol];
    maxpool_into(x.data(), len, kernel, stride, out.data_mut(), &mut idx);
    Ok((out, idx))
}

/// Routes each window's gradient to its argmax element.
pub fn maxpool1d_backward(dout: &Tensor, idx: &[u32], input_len: usize) -> Result<Tensor> {
    let (ch, ol) = dout.dims2()?;
    let mut dx = Tensor::zeros(&[ch, input_len]);
    for r in 0..ch {
        for t in 0..ol {
            dx.data_mut()[r * input_len + idx[r * ol + t] as usize] += dout.data()[r * ol + t];
        }
    }
    Ok(dx)
}

/// Row-major flatten of `a` followed by `b`.
pub fn flatten_concat(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(SerError::Shape(format!(
            "branch shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok([a.data(), b.data()].concat())
}

// ---------------------------------------------------------------------------
// linear

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub n_out: usize,
    pub n_in: usize,
    /// `n_out x n_in`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearParams {
    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        LinearParams {
            n_out,
            n_in,
            weights: vec![0.0; n_out * n_in],
            bias: vec![0.0; n_out],
        }
    }
}

pub(crate) fn linear_into(p: &LinearParams, x: &[f64], out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        let row = &p.weights[k * p.n_in..(k + 1) * p.n_in];
        *o = p.bias[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

pub fn linear(x: &[f64], p: &LinearParams) -> Result<Vec<f64>> {
    if x.len() != p.n_in {
        return Err(SerError::Shape(format!(
            "linear expects {} inputs, got {}",
            p.n_in,
            x.len()
        )));
    }
    let mut out = vec![0.0; p.n_out];
    linear_into(p, x, &mut out);
    Ok(out)
}

pub struct LinearGrads {
    pub dx: Vec<f64>,
    pub dweights: Vec<f64>,
    pub dbias: Vec<f64>,
}

pub fn linear_backward(x: &[f64], p: &LinearParams, dy: &[f64]) -> LinearGrads {
    let mut dx = vec![0.0; p.n_in];
    let mut dweights = vec![0.0; p.weights.len()];
    for (k, &g) in dy.iter().enumerate() {
        let row = &p.weights[k * p.n_in..(k + 1) * p.n_in];
        for ((d, w), (dw, xv)) in dx
            .iter_mut()
            .zip(row)
            .zip(dweights[k * p.n_in..(k + 1) * p.n_in].iter_mut().zip(x))
        {
            *d += w * g;
            *dw += g * xv;
        }
    }
    LinearGrads {
        dx,
        dweights,
        dbias: dy.to_vec(),
    }
}

// ---------------------------------------------------------------------------
// softmax

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_diff_check, DEFAULT_STEP};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Textbook cross-correlation with explicit zero padding.
    fn naive_conv(p: &Conv1dParams, x: &[f64], len: usize) -> Vec<f64> {
        let ol = p.out_len(len).unwrap();
        let mut out = vec![0.0; p.out_ch * ol];
        for o in 0..p.out_ch {
            for t in 0..ol {
                let mut acc = p.bias[o];
                for i in 0..p.in_ch {
                    for j in 0..p.kernel {
                        let s = (t * p.stride + j) as isize - p.padding as isize;
                        if s >= 0 && (s as usize) < len {
                            acc += p.weights[(o * p.in_ch + i) * p.kernel + j] * x[i * len + s as usize];
                        }
                    }
                }
                out[o * ol + t] = acc;
            }
        }
        out
    }

    fn conv_with(w: &[f64], k: usize, pad: usize) -> Conv1dParams {
        let mut p = Conv1dParams::zeros(1, 1, k, pad, 1);
        p.weights = w.to_vec();
        p
    }

    #[test]
    fn conv_identity_kernel() {
        let y = conv1d(&t2(&[&[1.0, 2.0, 3.0]]), &conv_with(&[0.0, 1.0, 0.0], 3, 1)).unwrap();
        assert_eq!(y.data(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv_box_kernel() {
        let y = conv1d(&t2(&[&[1.0, 2.0, 3.0]]), &conv_with(&[1.0; 3], 3, 1)).unwrap();
        assert_eq!(y.data(), [3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_half_padding_keeps_length() {
        let p = Conv1dParams::zeros(100, 13, 13, 6, 1);
        let y = conv1d(&Tensor::zeros(&[13, 898]), &p).unwrap();
        assert_eq!(y.shape(), [100, 898]);
        let p = Conv1dParams::zeros(100, 13, 7, 3, 1);
        assert_eq!(p.out_len(898), Some(898));
    }

    #[test]
    fn conv_channel_mismatch_errors() {
        let p = Conv1dParams::zeros(2, 3, 3, 1, 1);
        assert!(conv1d(&Tensor::zeros(&[2, 10]), &p).is_err());
    }

    #[test]
    fn conv_matches_naive_oracle() {
        for (stride, pad, k) in [(1, 6, 13), (1, 0, 3), (2, 1, 4), (3, 2, 5)] {
            let mut p = Conv1dParams::zeros(4, 3, k, pad, stride);
            p.weights = rand_vec(p.weights.len(), 1);
            p.bias = rand_vec(4, 2);
            let x = rand_vec(3 * 23, 3);
            let got = conv1d(&Tensor::new(&[3, 23], x.clone()).unwrap(), &p).unwrap();
            for (a, b) in got.data().iter().zip(naive_conv(&p, &x, 23)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_paths_agree() {
        // Sizes above the direct-loop cutoff, with a transposed operand.
        let (m, k, n) = (7, 90, 130);
        assert!(m * k * n > SMALL_GEMM);
        let a = rand_vec(m * k, 11);
        let bt = rand_vec(n * k, 12);
        let c0 = rand_vec(m * n, 13);
        let at: Vec<f64> = (0..k * m).map(|q| a[(q % m) * k + q / m]).collect();
        let b: Vec<f64> = (0..k * n).map(|q| bt[(q % n) * k + q / n]).collect();
        // Plain triple loop over explicit indices.
        let reference = |beta: f64, a_t: bool, b_t: bool| {
            let mut c = c0.clone();
            for i in 0..m {
                for j in 0..n {
                    let mut acc = beta * c[i * n + j];
                    for l in 0..k {
                        let av = if a_t { at[l * m + i] } else { a[i * k + l] };
                        let bv = if b_t { bt[j * k + l] } else { b[l * n + j] };
                        acc += av * bv;
                    }
                    c[i * n + j] = acc;
                }
            }
            c
        };
        for beta in [0.0, 1.0] {
            for (a_t, b_t) in [(false, false), (false, true), (true, false), (true, true)] {
                let sa = if a_t { (1, m as isize) } else { (k as isize, 1) };
                let sb = if b_t { (1, k as isize) } else { (n as isize, 1) };
                let (av, bv) = (if a_t { &at } else { &a }, if b_t { &bt } else { &b });
                let want = reference(beta, a_t, b_t);
                for direct in [false, true] {
                    let mut got = c0.clone();
                    if direct {
                        gemm_direct(m, k, n, av, sa, bv, sb, beta, &mut got);
                    } else {
                        gemm(m, k, n, av, sa, bv, sb, beta, &mut got);
                    }
                    for (x, y) in got.iter().zip(&want) {
                        assert!((x - y).abs() < 1e-12, "{a_t} {b_t} {direct}");
                    }
                }
            }
        }
    }

    #[test]
    fn large_conv_matches_naive_oracle() {
        let mut p = Conv1dParams::zeros(8, 13, 13, 6, 1);
        p.weights = rand_vec(p.weights.len(), 21);
        p.bias = rand_vec(8, 22);
        let x = rand_vec(13 * 200, 23);
        let got = conv1d(&Tensor::new(&[13, 200], x.clone()).unwrap(), &p).unwrap();
        for (a, b) in got.data().iter().zip(naive_conv(&p, &x, 200)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        for stride in [1, 2] {
            let mut p = Conv1dParams::zeros(3, 2, 5, 2, stride);
            p.weights = rand_vec(p.weights.len(), 4);
            p.bias = rand_vec(3, 5);
            let x = rand_vec(2 * 17, 6);
            let ol = p.out_len(17).unwrap();
            let r = rand_vec(3 * ol, 7);
            let xt = Tensor::new(&[2, 17], x.clone()).unwrap();
            let g = conv1d_backward(&xt, &p, &Tensor::new(&[3, ol], r.clone()).unwrap()).unwrap();
            let dot = |y: &Tensor| y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();

            let rep = finite_diff_check(
                |w| dot(&conv1d(&Tensor::new(&[2, 17], w.to_vec()).unwrap(), &p).unwrap()),
                &x,
                g.dx.data(),
                DEFAULT_STEP,
            );
            assert!(rep.passes(1e-7), "dx {rep:?}");
            let mut q = p.clone();
            let rep = finite_diff_check(
                |w| {
                    q.weights.copy_from_slice(w);
                    dot(&conv1d(&xt, &q).unwrap())
                },
                &p.weights,
                &g.dweights,
                DEFAULT_STEP,
            );
            assert!(rep.passes(1e-7), "dw {rep:?}");
            let mut q = p.clone();
            let rep = finite_diff_check(
                |b| {
                    q.bias.copy_from_slice(b);
                    dot(&conv1d(&xt, &q).unwrap())
                },
                &p.bias,
                &g.dbias,
                DEFAULT_STEP,
            );
            assert!(rep.passes(1e-7), "db {rep:?}");
        }
    }

    #[test]
    fn bn_constant_input_normalizes_to_zero() {
        let mut p = BatchNorm1dParams::new(2, 1e-5, 0.1);
        let (y, _) = batchnorm1d(&Tensor::new(&[2, 2, 3], vec![4.0; 12]).unwrap(), &mut p, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bn_two_values_map_to_unit() {
        let mut p = BatchNorm1dParams::new(1, 0.0, 0.1);
        let (y, _) = batchnorm1d(&Tensor::new(&[1, 1, 2], vec![1.0, 3.0]).unwrap(), &mut p, Mode::Train).unwrap();
        assert_eq!(y.data(), [-1.0, 1.0]);
        // Running stats moved towards mean 2 and unbiased variance 2.
        assert!((p.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((p.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn bn_eval_with_identity_stats() {
        let mut p = BatchNorm1dParams::new(1, 1e-5, 0.1);
        let x = Tensor::new(&[1, 1, 3], vec![-2.0, 0.5, 3.0]).unwrap();
        let (y, cache) = batchnorm1d(&x, &mut p, Mode::Eval).unwrap();
        assert!(cache.is_none());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b / (1.0f64 + 1e-5).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn bn_train_rejects_single_value() {
        let mut p = BatchNorm1dParams::new(1, 1e-5, 0.1);
        assert!(batchnorm1d(&Tensor::zeros(&[1, 1, 1]), &mut p, Mode::Train).is_err());
    }

    #[test]
    fn bn_backward_matches_finite_differences() {
        let (b, c, l) = (3, 2, 5);
        let mut p = BatchNorm1dParams::new(c, 1e-5, 0.1);
        p.gamma = vec![1.3, 0.6];
        p.beta = vec![0.2, -0.4];
        let x = rand_vec(b * c * l, 8);
        let r = rand_vec(b * c * l, 9);
        let shape = [b, c, l];
        let loss = |x: &[f64], p: &BatchNorm1dParams| {
            let mut p = p.clone();
            let (y, _) = batchnorm1d(&Tensor::new(&shape, x.to_vec()).unwrap(), &mut p, Mode::Train).unwrap();
            y.data().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut pm = p.clone();
        let (_, cache) = batchnorm1d(&Tensor::new(&shape, x.clone()).unwrap(), &mut pm, Mode::Train).unwrap();
        let (dx, dg, db) =
            batchnorm1d_backward(&Tensor::new(&shape, r.clone()).unwrap(), &cache.unwrap(), &p).unwrap();
        let rep = finite_diff_check(|w| loss(w, &p), &x, dx.data(), DEFAULT_STEP);
        assert!(rep.passes(1e-6), "dx {rep:?}");
        let rep = finite_diff_check(
            |g| {
                let mut q = p.clone();
                q.gamma.copy_from_slice(g);
                loss(&x, &q)
            },
            &p.gamma,
            &dg,
            DEFAULT_STEP,
        );
        assert!(rep.passes(1e-7), "dgamma {rep:?}");
        let rep = finite_diff_check(
            |be| {
                let mut q = p.clone();
                q.beta.copy_from_slice(be);
                loss(&x, &q)
            },
            &p.beta,
            &db,
            DEFAULT_STEP,
        );
        assert!(rep.passes(1e-7), "dbeta {rep:?}");
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), [0.0, 0.0, 2.0]);
        assert_eq!(relu_backward(&Tensor::new(&[3], vec![1.0; 3]).unwrap(), &x).data(), [0.0, 0.0, 1.0]);
        let neg = Tensor::new(&[2], vec![-3.0, -0.5]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::new(&[2], vec![3.0, 0.5]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn maxpool_examples() {
        let (y, idx) = maxpool1d(&t2(&[&[1.0, 5.0, 2.0, 7.0, 0.0, 3.0]]), 2, 2).unwrap();
        assert_eq!(y.data(), [5.0, 7.0, 3.0]);
        assert_eq!(idx, [1, 3, 5]);
        let (y, idx) = maxpool1d(&t2(&[&[2.0; 7]]), 3, 2).unwrap();
        assert_eq!(y.data(), [2.0; 3]);
        // First occurrence wins on ties.
        assert_eq!(idx, [0, 2, 4]);
        let (y, _) = maxpool1d(&Tensor::zeros(&[100, 898]), 30, 3).unwrap();
        assert_eq!(y.shape(), [100, 290]);
        assert!(maxpool1d(&Tensor::zeros(&[1, 5]), 6, 1).is_err());
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = t2(&[&[1.0, 5.0, 2.0, 7.0, 0.0, 3.0]]);
        let (_, idx) = maxpool1d(&x, 3, 1).unwrap();
        let dx = maxpool1d_backward(&t2(&[&[1.0, 10.0, 100.0, 1000.0]]), &idx, 6).unwrap();
        assert_eq!(dx.data(), [0.0, 1.0, 0.0, 1110.0, 0.0, 0.0]);
    }

    #[test]
    fn flatten_concat_layout() {
        let a = Tensor::new(&[100, 290], rand_vec(29_000, 1)).unwrap();
        let b = Tensor::zeros(&[100, 290]);
        let v = flatten_concat(&a, &b).unwrap();
        assert_eq!(v.len(), 58_000);
        assert_eq!(&v[..29_000], a.data());
        assert!(v[29_000..].iter().all(|&x| x == 0.0));
        assert!(flatten_concat(&a, &Tensor::zeros(&[100, 289])).is_err());
    }

    #[test]
    fn linear_examples() {
        let mut p = LinearParams::zeros(4, 3);
        p.bias = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(linear(&[5.0, 6.0, 7.0], &p).unwrap(), [1.0, 2.0, 3.0, 4.0]);
        let mut id = LinearParams::zeros(3, 3);
        for i in 0..3 {
            id.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(linear(&[5.0, 6.0, 7.0], &id).unwrap(), [5.0, 6.0, 7.0]);
        assert!(linear(&[1.0], &id).is_err());

        let mut r = LinearParams::zeros(4, 9);
        r.weights = rand_vec(36, 2);
        r.bias = rand_vec(4, 3);
        let x = rand_vec(9, 4);
        let y = linear(&x, &r).unwrap();
        for k in 0..4 {
            let mut acc = r.bias[k];
            for i in 0..9 {
                acc += r.weights[k * 9 + i] * x[i];
            }
            assert!((y[k] - acc).abs() < 1e-12);
        }
        let g = linear_backward(&x, &r, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.dx, &r.weights[..9]);
        assert_eq!(&g.dweights[..9], &x[..]);
        assert!(g.dweights[9..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0; 4]), [0.25; 4]);
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln(), 4f64.ln()]);
        for (a, b) in p.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        let big = softmax(&[1000.0, 1000.0, -1000.0, 0.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(z in prop::collection::vec(-20.0f64..20.0, 4), c in -50.0f64..50.0) {
            let a = softmax(&z);
            let b = softmax(&z.iter().map(|v| v + c).collect::<Vec<_>>());
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(*x > 0.0);
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn conv_agrees_with_oracle(
            stride in 1usize..4, pad in 0usize..4, k in 1usize..6, len in 6usize..20, seed in 0u64..1000
        ) {
            let mut p = Conv1dParams::zeros(2, 3, k, pad, stride);
            p.weights = rand_vec(p.weights.len(), seed);
            p.bias = rand_vec(2, seed + 1);
            let x = rand_vec(3 * len, seed + 2);
            let got = conv1d(&Tensor::new(&[3, len], x.clone()).unwrap(), &p).unwrap();
            for (a, b) in got.data().iter().zip(naive_conv(&p, &x, len)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
