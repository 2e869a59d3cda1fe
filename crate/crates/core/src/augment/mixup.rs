use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MixupConfig {
    /// Both shape parameters of the Beta distribution λ is drawn from.
    pub alpha: f64,
    /// Probability that a batch is mixed at all.
    pub tau: f64,
    /// Eligible layer indices; 0 is the input features.
    pub layers: Vec<usize>,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            tau: 0.15,
            layers: vec![0],
        }
    }
}

impl MixupConfig {
    pub fn validate(&self, encoder_layers: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("mixup alpha {} must be positive", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("mixup tau {} outside [0, 1]", self.tau)));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("mixup layer set is empty".into()));
        }
        if let Some(&k) = self.layers.iter().find(|&&k| k > encoder_layers) {
            return Err(Error::Config(format!(
                "mixup layer {k} exceeds the encoder depth {encoder_layers}"
            )));
        }
        Ok(())
    }
}

/// One batch's mixup decision.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub apply: bool,
    pub lambda: f64,
    pub layer: usize,
    pub permutation: Vec<usize>,
}

impl MixPlan {
    /// A plan that leaves the batch untouched.
    pub fn off(batch_size: usize) -> Self {
        Self {
            apply: false,
            lambda: 1.0,
            layer: 0,
            permutation: (0..batch_size).collect(),
        }
    }

    /// A forced plan, for experiments and tests.
    pub fn fixed(layer: usize, lambda: f64, permutation: Vec<usize>) -> Self {
        Self {
            apply: true,
            lambda,
            layer,
            permutation,
        }
    }

    /// Draw apply ~ Bernoulli(τ); when applied, λ ~ Beta(α, α),
    /// k ~ Uniform(S) and a uniform shuffle of the batch, in that order.
    pub fn sample(cfg: &MixupConfig, batch_size: usize, rng: &mut Rng) -> Result<Self> {
        if !decide_apply(cfg.tau, rng) {
            return Ok(Self::off(batch_size));
        }
        let lambda = sample_lambda(cfg.alpha, rng)?;
        let layer = sample_layer(&cfg.layers, rng)?;
        let mut permutation: Vec<usize> = (0..batch_size).collect();
        permutation.shuffle(rng);
        Ok(Self::fixed(layer, lambda, permutation))
    }

    pub fn validate(&self, batch_size: usize, encoder_layers: usize) -> Result<()> {
        if self.permutation.len() != batch_size {
            return Err(Error::Plan(format!(
                "permutation covers {} rows, batch has {batch_size}",
                self.permutation.len()
            )));
        }
        let mut seen = vec![false; batch_size];
        for &p in &self.permutation {
            if p >= batch_size || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Plan(format!("{:?} is not a permutation", self.permutation)));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Plan(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.apply && self.layer > encoder_layers {
            return Err(Error::Plan(format!(
                "mixup layer {} exceeds the encoder depth {encoder_layers}",
                self.layer
            )));
        }
        Ok(())
    }
}

pub fn sample_lambda(alpha: f64, rng: &mut Rng) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("Beta coefficient {alpha} must be positive")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(beta.sample(rng))
}

pub fn sample_layer(layers: &[usize], rng: &mut Rng) -> Result<usize> {
    if layers.is_empty() {
        return Err(Error::Parameter("cannot sample from an empty layer set".into()));
    }
    Ok(layers[rng.random_range(0..layers.len())])
}

pub fn decide_apply(tau: f64, rng: &mut Rng) -> bool {
    rng.random::<f64>() < tau
}

/// `λ·x + (1−λ)·x[perm]` along axis 0.
pub fn mix_rows<T: Real>(x: &Tensor<T>, lambda: f64, perm: &[usize]) -> Result<Tensor<T>> {
    let b = *x.shape().first().unwrap_or(&0);
    if perm.len() != b {
        return Err(Error::Plan(format!("permutation of {} rows for a batch of {b}", perm.len())));
    }
    let w = x.len() / b.max(1);
    let (l, r) = (T::c(lambda), T::c(1.0 - lambda));
    let xd = x.data();
    let mut out = Vec::with_capacity(x.len());
    for (i, &j) in perm.iter().enumerate() {
        let (a, c) = (&xd[i * w..(i + 1) * w], &xd[j * w..(j + 1) * w]);
        out.extend(a.iter().zip(c).map(|(&u, &v)| l * u + r * v));
    }
    Tensor::new(x.shape(), out)
}

/// Valid length of each mixed row: the longest source that carries weight.
pub fn mix_lengths(lengths: &[usize], lambda: f64, perm: &[usize]) -> Vec<usize> {
    perm.iter()
        .enumerate()
        .map(|(i, &j)| {
            if lambda >= 1.0 {
                lengths[i]
            } else if lambda <= 0.0 {
                lengths[j]
            } else {
                lengths[i].max(lengths[j])
            }
        })
        .collect()
}

/// Shuffle the batch, interpolate features and return the partner labels
/// together with the permutation used.
pub fn mixup<T: Real>(
    x: &Tensor<T>,
    labels: &[Vec<usize>],
    lambda: f64,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Vec<Vec<usize>>, Vec<usize>)> {
    let b = *x.shape().first().ok_or_else(|| Error::Dimension("mixup of a scalar".into()))?;
    if b == 0 || labels.len() != b {
        return Err(Error::Dimension(format!("mixup of {b} rows with {} label sequences", labels.len())));
    }
    let mut perm: Vec<usize> = (0..b).collect();
    perm.shuffle(rng);
    let mixed = mix_rows(x, lambda, &perm)?;
    let shuffled = perm.iter().map(|&j| labels[j].clone()).collect();
    Ok((mixed, shuffled, perm))
}
