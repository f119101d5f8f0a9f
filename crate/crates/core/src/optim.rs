//! Adam, cosine learning-rate decay and parameter EMA.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam<T> {
    cfg: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let step_size = T::from_f64(lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2.sqrt());
        let eps = T::from_f64(self.cfg.eps);
        let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
        let (ob1, ob2) = (T::ONE - b1t, T::ONE - b2t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1t * *mi + ob1 * gi;
                *vi = b2t * *vi + ob2 * gi * gi;
                *pi -= step_size * *mi / (vi.sqrt() * inv_c2 + eps);
            }
        }
    }
}

/// Cosine decay from `base` at step 0 to `floor` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub base: f64,
    pub floor: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        let frac = (step.min(self.total_steps) as f64) / self.total_steps.max(1) as f64;
        self.floor + (self.base - self.floor) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// `shadow ← decay·shadow + (1−decay)·params` for every named parameter.
pub fn ema_update<T: Scalar>(shadow: &mut ParamStore<T>, params: &ParamStore<T>, decay: f64) {
    let d = T::from_f64(decay);
    let od = T::ONE - d;
    for (name, s) in shadow.iter_mut() {
        if let Some(p) = params.get(name) {
            for (si, &pi) in s.data_mut().iter_mut().zip(p.data()) {
                *si = d * *si + od * pi;
            }
        }
    }
}
