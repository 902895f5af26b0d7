//! Adam with bias correction, linear warmup and global-norm clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::ParamSet;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Learning rate that rises linearly over the first `warmup_ratio · total`
/// steps and then stays at `peak`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
}

impl WarmupSchedule {
    pub fn new(peak: f64, warmup_ratio: f64, total_steps: u64) -> Self {
        let warmup_steps = if warmup_ratio > 0.0 {
            ((warmup_ratio * total_steps as f64).ceil() as u64).max(1)
        } else {
            0
        };
        Self { peak, warmup_steps }
    }

    /// Rate for the 1-based step `t`.
    pub fn lr(&self, t: u64) -> f64 {
        if t >= self.warmup_steps {
            self.peak
        } else {
            self.peak * t as f64 / self.warmup_steps as f64
        }
    }
}

/// First and second moments per parameter name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// Euclidean norm over every gradient entry.
pub fn global_norm(grads: &BTreeMap<String, Vec<f64>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Scale `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of every parameter that has a gradient entry.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Vec<f64>>, lr: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.len() != g.len() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}
