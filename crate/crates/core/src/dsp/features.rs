//! Frame-level MFCC and log-Mel features.
//!
//! Pipeline per utterance: pad/cut to a fixed length, slice 25 ms frames at a
//! 10 ms hop, Hamming window, zero-pad to 512 and take the power spectrum,
//! apply 26 HTK-style triangular mel filters over 0..6500 Hz, natural log with
//! a floor, and optionally an orthonormal DCT-II keeping coefficients 0..12.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::manifest::SAMPLE_RATE;
use crate::data::wav::Waveform;
use crate::error::{Result, SerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfcc13,
    Logmel26,
}

impl FeatureKind {
    pub fn code(self) -> u32 {
        match self {
            FeatureKind::Mfcc13 => 0,
            FeatureKind::Logmel26 => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<FeatureKind> {
        match code {
            0 => Some(FeatureKind::Mfcc13),
            1 => Some(FeatureKind::Logmel26),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    /// Fixed signal length in seconds.
    pub t_fixed: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub mel_fmin: f64,
    pub mel_fmax: f64,
    pub n_mfcc: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            kind: FeatureKind::Mfcc13,
            t_fixed: 9.0,
            frame_len: 400,
            hop: 160,
            fft_size: 512,
            n_mels: 26,
            mel_fmin: 0.0,
            mel_fmax: 6500.0,
            n_mfcc: 13,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SerError::InvalidArgument(m));
        if !(1.0..=15.0).contains(&self.t_fixed) {
            return bad(format!("t_fixed {} not in [1, 15] seconds", self.t_fixed));
        }
        if self.frame_len > self.fft_size || self.frame_len < 2 || self.hop == 0 {
            return bad("need 2 <= frame_len <= fft_size and hop >= 1".into());
        }
        if self.mel_fmax > SAMPLE_RATE as f64 / 2.0 || self.mel_fmin >= self.mel_fmax {
            return bad(format!(
                "mel range [{}, {}] invalid for {SAMPLE_RATE} Hz",
                self.mel_fmin, self.mel_fmax
            ));
        }
        if self.n_mfcc > self.n_mels || !(self.log_floor > 0.0) {
            return bad("need n_mfcc <= n_mels and log_floor > 0".into());
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            FeatureKind::Mfcc13 => self.n_mfcc,
            FeatureKind::Logmel26 => self.n_mels,
        }
    }

    pub fn fixed_samples(&self) -> usize {
        (self.t_fixed * SAMPLE_RATE as f64).round() as usize
    }

    /// Frames produced from a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.hop
        }
    }

    /// Frame count of every fixed-length utterance.
    pub fn n_frames(&self) -> usize {
        self.frames_for(self.fixed_samples())
    }
}

/// `s x d` features, row-major by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    /// Frames starting inside the original (unpadded) signal.
    pub valid_frames: usize,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Transposes into the `d x s` channel-major layout the network consumes.
    pub fn to_channel_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for t in 0..self.frames {
            for c in 0..self.dim {
                out[c * self.frames + t] = self.data[t * self.dim + c];
            }
        }
        out
    }
}

/// Cuts from the start or zero-pads at the end to exactly `t_fixed` seconds.
pub fn fix_length(w: &Waveform, t_fixed: f64) -> Waveform {
    let target = (t_fixed * SAMPLE_RATE as f64).round() as usize;
    let mut samples = w.samples.clone();
    samples.resize(target, 0.0);
    Waveform {
        samples,
        sample_rate: w.sample_rate,
        original_length: w.original_length,
    }
}

/// Consecutive non-overlapping `t_fixed` windows over the original signal.
/// The last window is zero-padded; a short or empty signal gives exactly one
/// padded segment.
pub fn segment_utterance(w: &Waveform, t_fixed: f64) -> Vec<Waveform> {
    let target = ((t_fixed * SAMPLE_RATE as f64).round() as usize).max(1);
    let n = w.samples.len().div_ceil(target).max(1);
    (0..n)
        .map(|k| {
            let start = (k * target).min(w.samples.len());
            let end = ((k + 1) * target).min(w.samples.len());
            let mut samples = w.samples[start..end].to_vec();
            samples.resize(target, 0.0);
            Waveform {
                samples,
                sample_rate: w.sample_rate,
                original_length: end - start,
            }
        })
        .collect()
}

pub struct Frames {
    /// `s` frames of `frame_len` samples each, row-major.
    pub data: Vec<f64>,
    pub count: usize,
    pub frame_len: usize,
    pub valid_frames: usize,
}

pub fn frame_signal(w: &Waveform, cfg: &FeatureConfig) -> Frames {
    let count = cfg.frames_for(w.samples.len());
    let mut data = Vec::with_capacity(count * cfg.frame_len);
    for i in 0..count {
        let start = i * cfg.hop;
        data.extend_from_slice(&w.samples[start..start + cfg.frame_len]);
    }
    let valid_frames = count.min(w.original_length.div_ceil(cfg.hop));
    Frames {
        data,
        count,
        frame_len: cfg.frame_len,
        valid_frames,
    }
}

/// Symmetric Hamming window, `0.54 - 0.46 cos(2 pi k / (n - 1))`.
pub fn hamming_window(n: usize) -> Vec<f64> {
    assert!(n >= 2, "hamming window needs n >= 2");
    let denom = (n - 1) as f64;
    (0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / denom).cos())
        .collect()
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_mels x (fft_size/2 + 1)` triangular filters. Edges are equally spaced
/// on the mel axis; each triangle peaks at 1 on its center frequency and is
/// evaluated at the exact bin frequencies.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.fft_size / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax));
    let mut edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    // Pin the outer edges so round-tripping through the mel scale cannot leak
    // support past fmax.
    edges[0] = cfg.mel_fmin;
    edges[cfg.n_mels + 1] = cfg.mel_fmax;
    let bin_hz = SAMPLE_RATE as f64 / cfg.fft_size as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    if f <= lo || f >= hi || f > cfg.mel_fmax {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Row-major orthonormal DCT-II basis, `n_out x n_in`.
fn dct_matrix(n_in: usize, n_out: usize) -> Vec<f64> {
    let n = n_in as f64;
    let mut m = Vec::with_capacity(n_in * n_out);
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for i in 0..n_in {
            m.push(scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos());
        }
    }
    m
}

/// Precomputed window, filterbank, DCT basis and FFT plan for one config.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<FeatureExtractor> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(FeatureExtractor {
            window: hamming_window(cfg.frame_len),
            filterbank: mel_filterbank(&cfg),
            dct: dct_matrix(cfg.n_mels, cfg.n_mfcc),
            fft,
            cfg,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.filterbank
    }

    /// `|X[b]|^2` for `b = 0..=fft_size/2` of the windowed, zero-padded frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        for ((slot, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            slot.re = x * w;
        }
        self.fft.process(&mut buf);
        buf[..self.cfg.fft_size / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect()
    }

    pub fn log_mel(&self, frame: &[f64]) -> Vec<f64> {
        let power = self.power_spectrum(frame);
        self.filterbank
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(self.cfg.log_floor).ln()
            })
            .collect()
    }

    pub fn mfcc(&self, logmel: &[f64]) -> Vec<f64> {
        let n = self.cfg.n_mels;
        self.dct
            .chunks_exact(n)
            .map(|basis| basis.iter().zip(logmel).map(|(b, x)| b * x).sum())
            .collect()
    }

    /// fix_length, frame, then per-frame log-Mel (and DCT for MFCC).
    /// The result is not normalized.
    pub fn extract(&self, w: &Waveform) -> FeatureMatrix {
        let fixed = fix_length(w, self.cfg.t_fixed);
        let frames = frame_signal(&fixed, &self.cfg);
        let dim = self.cfg.dim();
        let mut data = Vec::with_capacity(frames.count * dim);
        for frame in frames.data.chunks_exact(frames.frame_len) {
            let lm = self.log_mel(frame);
            match self.cfg.kind {
                FeatureKind::Mfcc13 => data.extend(self.mfcc(&lm)),
                FeatureKind::Logmel26 => data.extend(lm),
            }
        }
        FeatureMatrix {
            frames: frames.count,
            dim,
            data,
            valid_frames: frames.valid_frames,
            kind: self.cfg.kind,
        }
    }
}

pub fn extract_features(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    Ok(FeatureExtractor::new(cfg.clone())?.extract(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(kind: FeatureKind, t: f64) -> FeatureConfig {
        FeatureConfig {
            kind,
            t_fixed: t,
            ..FeatureConfig::default()
        }
    }

    #[test]
    fn fix_length_pads_and_cuts() {
        let w = Waveform::new(vec![0.5; 32_000]);
        let f = fix_length(&w, 9.0);
        assert_eq!(f.len(), 144_000);
        assert!(f.samples[32_000..].iter().all(|&x| x == 0.0));
        assert_eq!(f.original_length, 32_000);

        let long = Waveform::new((0..192_000).map(|i| i as f64).collect());
        let f = fix_length(&long, 9.0);
        assert_eq!(f.samples, long.samples[..144_000]);

        let exact = Waveform::new(vec![0.25; 144_000]);
        assert_eq!(fix_length(&exact, 9.0), exact);
    }

    #[test]
    fn frame_counts() {
        let c = FeatureConfig::default();
        assert_eq!(c.frames_for(144_000), 898);
        assert_eq!(c.frames_for(16_000), 98);
        assert_eq!(c.frames_for(400), 1);
        let f = frame_signal(&Waveform::new((0..1000).map(|i| i as f64).collect()), &c);
        assert_eq!(f.count, 4);
        assert_eq!(f.data[400], 160.0);
        assert_eq!(f.data[3 * 400 + 399], 480.0 + 399.0);
    }

    #[test]
    fn frame_count_formula_for_every_length() {
        for t in 1..=15 {
            let c = cfg(FeatureKind::Mfcc13, t as f64);
            assert_eq!(c.n_frames(), 1 + (16_000 * t - 400) / 160);
        }
    }

    #[test]
    fn valid_frames_counts_starts_inside_signal() {
        let c = cfg(FeatureKind::Mfcc13, 1.0);
        let w = fix_length(&Waveform::new(vec![0.1; 1600]), 1.0);
        // Starts 0, 160, ..., 1440 lie inside the first 1600 samples.
        assert_eq!(frame_signal(&w, &c).valid_frames, 10);
        let w = fix_length(&Waveform::new(vec![0.1; 1601]), 1.0);
        assert_eq!(frame_signal(&w, &c).valid_frames, 11);
        let w = fix_length(&Waveform::new(vec![0.1; 40_000]), 1.0);
        assert_eq!(frame_signal(&w, &c).valid_frames, 98);
    }

    #[test]
    fn hamming_endpoints_and_symmetry() {
        let w = hamming_window(400);
        assert!((w[0] - 0.08).abs() < 1e-15);
        for k in 0..400 {
            assert!((w[k] - w[399 - k]).abs() < 1e-12);
            assert!(w[k] <= 1.0);
        }
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max > 0.9999 && (w[199] == max || w[200] == max));
    }

    #[test]
    fn mel_scale_values() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(3210.0)) - 3210.0).abs() < 1e-9);
    }

    #[test]
    fn filterbank_rows_are_triangles() {
        let c = FeatureConfig::default();
        let fb = mel_filterbank(&c);
        assert_eq!(fb.len(), 26);
        for row in &fb {
            assert_eq!(row.len(), 257);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(row.iter().any(|&v| v > 0.0));
            // Support is one contiguous run: rising then falling.
            let nz: Vec<usize> = (0..257).filter(|&b| row[b] > 0.0).collect();
            assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len());
            let peak = nz.iter().copied().max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!(nz.windows(2).all(|p| (p[1] <= peak) == (row[p[1]] >= row[p[0]])));
        }
        // Nothing above 6500 Hz (bin 208 = 6500 Hz exactly, which is an edge).
        for row in &fb {
            assert!(row[208..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_frame_gives_zero_spectrum_and_floor() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        assert!(ex.power_spectrum(&[0.0; 400]).iter().all(|&p| p == 0.0));
        let floor = 1e-10f64.ln();
        assert!(ex.log_mel(&[0.0; 400]).iter().all(|&v| v == floor));
    }

    #[test]
    fn bin_31_cosine_peaks_at_bin_31() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let f = 31.0 * 16_000.0 / 512.0;
        assert_eq!(f, 968.75);
        let frame: Vec<f64> = (0..400)
            .map(|n| (2.0 * PI * f * n as f64 / 16_000.0).cos())
            .collect();
        let p = ex.power_spectrum(&frame);
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, 31);
    }

    #[test]
    fn scaling_frame_shifts_log_mel_by_two_ln_c() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frame: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = 3.5f64;
        let scaled: Vec<f64> = frame.iter().map(|x| x * c).collect();
        for (a, b) in ex.log_mel(&frame).iter().zip(ex.log_mel(&scaled)) {
            assert!((b - a - 2.0 * c.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn dct_of_constant() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let out = ex.mfcc(&[2.0; 26]);
        assert_eq!(out.len(), 13);
        assert!((out[0] - 2.0 * 26f64.sqrt()).abs() < 1e-12);
        assert!(out[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn extract_shapes() {
        let w = Waveform::new(vec![0.0; 16_000]);
        let m = extract_features(&w, &cfg(FeatureKind::Mfcc13, 9.0)).unwrap();
        assert_eq!((m.frames, m.dim), (898, 13));
        let l = extract_features(&w, &cfg(FeatureKind::Logmel26, 9.0)).unwrap();
        assert_eq!((l.frames, l.dim), (898, 26));
        // Silence everywhere: all rows identical.
        assert!((1..m.frames).all(|i| m.row(i) == m.row(0)));
    }

    #[test]
    fn padded_tail_rows_are_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = Waveform::new((0..8000).map(|_| rng.random_range(-0.5..0.5)).collect());
        let m = extract_features(&w, &cfg(FeatureKind::Logmel26, 2.0)).unwrap();
        assert_eq!(m.valid_frames, 50);
        let first_silent = 8000 / 160;
        assert!((first_silent..m.frames).all(|i| m.row(i) == m.row(m.frames - 1)));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(FeatureKind::Mfcc13, 0.5).validate().is_err());
        assert!(cfg(FeatureKind::Mfcc13, 16.0).validate().is_err());
        let mut c = FeatureConfig::default();
        c.mel_fmax = 9000.0;
        assert!(c.validate().is_err());
        assert!(FeatureConfig::default().validate().is_ok());
    }

    #[test]
    fn segmentation_counts() {
        let secs = |s: f64| Waveform::new(vec![0.1; (s * 16_000.0) as usize]);
        assert_eq!(segment_utterance(&secs(9.0), 9.0).len(), 1);
        assert_eq!(segment_utterance(&secs(18.0), 9.0).len(), 2);
        let short = segment_utterance(&secs(4.0), 9.0);
        assert_eq!(short.len(), 1);
        assert_eq!(short[0].len(), 144_000);
        assert_eq!(short[0].original_length, 64_000);
        assert_eq!(short[0].samples[64_000], 0.0);
        assert_eq!(segment_utterance(&Waveform::new(Vec::new()), 2.0).len(), 1);
        let w = Waveform::new((0..50_000).map(|i| i as f64).collect());
        let segs = segment_utterance(&w, 2.0);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].samples[0], 32_000.0);
        assert_eq!(segs[1].original_length, 18_000);
        assert_eq!(segs[0].samples, fix_length(&w, 2.0).samples);
    }
}
