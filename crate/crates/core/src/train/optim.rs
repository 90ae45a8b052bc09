//! Adam and the halve-on-plateau learning-rate rule.

use serde::{Deserialize, Serialize};

use crate::nn::model::{Gradients, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of a flat parameter slice.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        self.t += 1;
        self.apply(params, grads, lr, 0);
    }

    fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64, offset: usize) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((w, &g), mi), vi) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Updates every trainable array of `params` in place.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    assert_eq!(params.param_count(), state.m.len(), "parameter count changed");
    state.t += 1;
    let mut offset = 0;
    for (w, g) in params.trainable_mut().into_iter().zip(grads.slices()) {
        let n = w.len();
        state.apply(w, g, lr, offset);
        offset += n;
    }
}

/// Halves the learning rate once the monitored value has gone `patience`
/// consecutive epochs without a strict improvement, then starts counting
/// again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub patience: usize,
    pub best: f64,
    pub bad_epochs: usize,
    pub halvings: u32,
}

impl PlateauScheduler {
    pub fn new(lr0: f64, patience: usize) -> PlateauScheduler {
        PlateauScheduler {
            lr: lr0,
            patience: patience.max(1),
            best: f64::INFINITY,
            bad_epochs: 0,
            halvings: 0,
        }
    }

    /// Records one epoch's value and returns the learning rate for the next.
    pub fn observe(&mut self, value: f64) -> f64 {
        if value < self.best {
            self.best = value;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr /= 2.0;
                self.halvings += 1;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Learning rates after each epoch of `values`.
pub fn lr_on_plateau(values: &[f64], lr0: f64, patience: usize) -> Vec<f64> {
    let mut s = PlateauScheduler::new(lr0, patience);
    values.iter().map(|&v| s.observe(v)).collect()
}
