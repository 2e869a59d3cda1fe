//! Warmup schedule and Adam with gradient accumulation.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Real, Tensor};

/// `peak · min(step / warmup, sqrt(warmup / step))`: linear warmup to the
/// peak at `step = warmup`, inverse square root decay afterwards.
pub fn lr_at(step: usize, peak_lr: f64, warmup_steps: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup_steps.max(1) as f64;
    peak_lr * (s / w).min((w / s).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub accum_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm limit applied before each update.
    pub grad_clip: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            peak_lr: 0.002,
            warmup_steps: 200,
            accum_steps: 6,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            grad_clip: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak learning rate {} must be positive", self.peak_lr)));
        }
        if self.warmup_steps == 0 || self.accum_steps == 0 {
            return Err(Error::Config("warmup and accumulation steps must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip.filter(|c| !(*c > 0.0)) {
            return Err(Error::Config(format!("gradient clip {c} must be positive")));
        }
        Ok(())
    }
}

/// Sums micro-batch gradients and applies an Adam update once every
/// `accum_steps` of them.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Real> {
    cfg: OptimConfig,
    grads: Vec<Tensor<T>>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    pending: usize,
    updates: usize,
}

impl<T: Real> Optimizer<T> {
    pub fn new(model: &Model<T>, cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        let zeros = || model.params().values().iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Ok(Self {
            cfg,
            grads: zeros(),
            m: zeros(),
            v: zeros(),
            pending: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    /// Updates applied so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Micro-batches accumulated since the last update.
    pub fn pending(&self) -> usize {
        self.pending
    }

    /// Learning rate the next update will use.
    pub fn next_lr(&self) -> f64 {
        lr_at(self.updates + 1, self.cfg.peak_lr, self.cfg.warmup_steps)
    }

    pub fn accumulated(&self) -> &[Tensor<T>] {
        &self.grads
    }

    /// Add one micro-batch's gradients; `None` entries contribute zero.
    pub fn accumulate(&mut self, grads: Vec<Option<Tensor<T>>>) -> Result<()> {
        if grads.len() != self.grads.len() {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.grads.len()
            )));
        }
        for (acc, g) in self.grads.iter_mut().zip(grads) {
            if let Some(g) = g {
                for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += x;
                }
            }
        }
        self.pending += 1;
        Ok(())
    }

    pub fn ready(&self) -> bool {
        self.pending >= self.cfg.accum_steps
    }

    /// Apply one Adam step with the accumulated gradients and clear them.
    /// Returns the learning rate used.
    pub fn apply(&mut self, model: &mut Model<T>) -> f64 {
        let lr = self.next_lr();
        self.updates += 1;
        self.pending = 0;
        let t = self.updates as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let clip = self.cfg.grad_clip.map_or(1.0, |c| {
            let norm = self
                .grads
                .iter()
                .flat_map(|g| g.data())
                .map(|x| x.f64() * x.f64())
                .sum::<f64>()
                .sqrt();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        });
        let (b1, b2, eps, lr_t) = (T::c(b1), T::c(b2), T::c(self.cfg.eps), T::c(lr));
        let (c1, c2, clip) = (T::c(c1), T::c(c2), T::c(clip));
        for (((p, g), m), v) in model
            .params_mut()
            .values_mut()
            .iter_mut()
            .zip(&mut self.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data_mut())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let grad = *g * clip;
                *m = b1 * *m + (T::one() - b1) * grad;
                *v = b2 * *v + (T::one() - b2) * grad * grad;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr_t * mhat / (vhat.sqrt() + eps);
                *g = T::zero();
            }
        }
        lr
    }
}
