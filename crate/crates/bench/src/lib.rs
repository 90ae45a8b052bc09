//! Deterministic fixtures shared by the benchmarks.

use ser_core::data::Waveform;
use ser_core::dsp::FeatureConfig;
use ser_core::nn::{init_params, ModelDims, ModelParams, Tensor};
use ser_core::train::PairBatch;

/// `seconds` of a two-partial tone at 16 kHz.
pub fn tone(seconds: f64) -> Waveform {
    let n = (seconds * 16_000.0) as usize;
    Waveform::new(
        (0..n)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                0.5 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() + 0.2 * (2.0 * std::f64::consts::PI * 1330.0 * t).sin()
            })
            .collect(),
    )
}

/// Full-width model for `t_fixed`-second MFCC inputs.
pub fn standard_model(t_fixed: f64) -> ModelParams {
    let cfg = FeatureConfig {
        t_fixed,
        ..FeatureConfig::default()
    };
    init_params(0, &ModelDims::standard(cfg.dim(), cfg.n_frames())).expect("valid dims")
}

/// A `batch x d x s` input with bounded, non-periodic values.
pub fn inputs(model: &ModelParams, batch: usize) -> Tensor {
    let (d, s) = (model.dims.in_ch, model.dims.seq_len);
    let data = (0..batch * d * s).map(|i| ((i as f64) * 0.618_033_988_7).fract() * 2.0 - 1.0).collect();
    Tensor::new(&[batch, d, s], data).expect("matching length")
}

/// Pairs alternating positive and negative over four classes.
pub fn pair_batch(model: &ModelParams, pairs: usize) -> PairBatch {
    let x = inputs(model, 2 * pairs);
    let per = model.dims.in_ch * model.dims.seq_len;
    let (a, b) = x.data().split_at(pairs * per);
    let shape = [pairs, model.dims.in_ch, model.dims.seq_len];
    let class1: Vec<usize> = (0..pairs).map(|i| i % 4).collect();
    let class2: Vec<usize> = (0..pairs).map(|i| if i % 2 == 0 { i % 4 } else { (i + 1) % 4 }).collect();
    PairBatch {
        x1: Tensor::new(&shape, a.to_vec()).expect("matching length"),
        x2: Tensor::new(&shape, b.to_vec()).expect("matching length"),
        positive: class1.iter().zip(&class2).map(|(p, q)| p == q).collect(),
        class1,
        class2,
        aux1: None,
        aux2: None,
    }
}
