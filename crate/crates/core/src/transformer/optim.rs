//! Adam with warmup/inverse-sqrt schedule, clipping and resumable data order.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::model::{Example, PackedBatch};
use super::params::TransformerParams;
use super::tensor::Scalar;
use super::ModelError;
use crate::rng::RngStream;

/// Optimizer moments plus the number of updates applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: TransformerParams<T>,
    pub v: TransformerParams<T>,
    pub step: usize,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &TransformerParams<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// 1-based index of the update just applied.
    pub step: usize,
    pub loss: f64,
    pub learning_rate: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub tokens: usize,
}

/// Permutation of `0..n` used in `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed).named("data-order").child(epoch);
    order.shuffle(&mut rng);
    order
}

/// Record indices of batch `step` (0-based). The stream walks through one
/// fresh permutation per epoch, so it depends only on `(n, seed, step)`.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let start = step * batch_size;
    let mut epoch = usize::MAX;
    let mut order = Vec::new();
    for p in start..start + batch_size {
        let e = p / n;
        if e != epoch {
            epoch = e;
            order = epoch_order(n, seed, e as u64);
        }
        out.push(order[p % n]);
    }
    out
}

/// Single-writer training loop state.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub params: TransformerParams<T>,
    pub adam: AdamState<T>,
    pub config: TrainConfig,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(params: TransformerParams<T>, config: TrainConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let adam = AdamState::new(&params);
        Ok(Trainer { params, adam, config })
    }

    /// Continues from saved parameters and optimizer state.
    pub fn resume(params: TransformerParams<T>, adam: AdamState<T>, config: TrainConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Trainer { params, adam, config })
    }

    pub fn step_count(&self) -> usize {
        self.adam.step
    }

    pub fn is_done(&self) -> bool {
        self.adam.step >= self.config.total_steps
    }

    /// One update on the next batch of `data`. On a numerical failure the
    /// parameters and optimizer state are left untouched.
    pub fn step(&mut self, data: &[Example]) -> Result<StepReport, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyData);
        }
        let idx = batch_indices(data.len(), self.config.batch_size, self.config.seed, self.adam.step);
        let batch = PackedBatch::new(idx.iter().map(|&i| &data[i]));
        let tokens = idx.iter().map(|&i| data[i].target_tokens()).sum();
        let mut dropout = RngStream::new(self.config.seed)
            .named("dropout")
            .child(self.adam.step as u64);
        let (loss, mut grad) = self.params.loss_and_grad(&batch, Some(&mut dropout))?;
        let norm = grad.global_norm();
        if !norm.is_finite() {
            let tensor = grad.first_non_finite().unwrap_or_else(|| String::from("gradient norm"));
            return Err(ModelError::Numerical { tensor });
        }
        let clip = T::from_f64(self.config.clip_norm);
        if norm > clip {
            let f = clip / norm;
            for (_, t) in grad.tensors_mut() {
                t.scale(f);
            }
        }
        let step = self.adam.step + 1;
        let lr = self.config.learning_rate_at(step);
        self.apply_adam(&grad, step, lr);
        self.adam.step = step;
        Ok(StepReport {
            step,
            loss: loss.to_f64(),
            learning_rate: lr,
            grad_norm: norm.to_f64(),
            tokens,
        })
    }

    fn apply_adam(&mut self, grad: &TransformerParams<T>, step: usize, lr: f64) {
        let c = &self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let eps = T::from_f64(c.epsilon);
        let bc1 = T::from_f64(1.0 - libm::pow(c.beta1, step as f64));
        let bc2 = T::from_f64(1.0 - libm::pow(c.beta2, step as f64));
        let lr = T::from_f64(lr);
        let one = T::one();
        let params = self.params.tensors_mut();
        let ms = self.adam.m.tensors_mut();
        let vs = self.adam.v.tensors_mut();
        for ((((_, p), (_, m)), (_, v)), (_, g)) in params.into_iter().zip(ms).zip(vs).zip(grad.tensors()) {
            let p = p.data_mut();
            let m = m.data_mut();
            let v = v.data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    /// Runs until `total_steps`, calling `on_step` after each update. The
    /// callback may stop training early by returning `false`.
    pub fn run(
        &mut self,
        data: &[Example],
        mut on_step: impl FnMut(&Self, &StepReport) -> bool,
    ) -> Result<Vec<StepReport>, ModelError> {
        let mut curve = Vec::new();
        while !self.is_done() {
            let r = self.step(data)?;
            curve.push(r);
            if !on_step(self, &r) {
                break;
            }
        }
        Ok(curve)
    }
}
