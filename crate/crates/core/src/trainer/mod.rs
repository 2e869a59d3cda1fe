//! Training loop, evaluation, and run records.
//!
//! Every micro-batch draws its mixup plan, dropout masks, and SpecAugment
//! masks from streams indexed by its ordinal, and each epoch's batch order
//! from a stream indexed by the epoch. A run is therefore a pure function
//! of the seed, the configuration, and the data.

mod metrics;
mod optim;
mod runlog;

use std::path::PathBuf;

use rand::Rng as _;

pub use metrics::{edit_distance, evaluate, token_error, EvalReport, TokenErrors};
pub use optim::{lr_at, OptimConfig, Optimizer};
pub use runlog::{EvalRecord, MixStats, RunLog, StepRecord, LAMBDA_BINS};

use crate::augment::{MixPlan, MixupConfig, SpecAugmentConfig};
use crate::dataio::{check_alignable, make_batches, Batch, Utterance};
use crate::error::{Error, Result};
use crate::losses::{mixed_loss, LossBreakdown, LossConfig};
use crate::model::{save_checkpoint, subsampled_len, Model, Session};
use crate::rng::{Rng, StreamKind, Streams};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optim: OptimConfig,
    pub seed: u64,
    /// Padded feature values per batch, `B · T_max · F`.
    pub max_elements: usize,
    /// `None` trains without mixup.
    pub mixup: Option<MixupConfig>,
    pub spec_augment: SpecAugmentConfig,
    pub eval_every: usize,
    pub loss: LossConfig,
    /// Where `best.mxrc` and `last.mxrc` go, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            optim: OptimConfig::default(),
            seed: 1,
            max_elements: 4096,
            mixup: None,
            spec_augment: SpecAugmentConfig::default(),
            eval_every: 1,
            loss: LossConfig::default(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, encoder_layers: usize) -> Result<()> {
        self.optim.validate()?;
        if let Some(m) = &self.mixup {
            m.validate(encoder_layers)?;
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.loss.ctc_weight) || !(0.0..1.0).contains(&self.loss.label_smoothing) {
            return Err(Error::Config(format!(
                "ctc weight {} or label smoothing {} out of range",
                self.loss.ctc_weight, self.loss.label_smoothing
            )));
        }
        Ok(())
    }
}

/// Result of one forward/backward pass.
#[derive(Debug, Clone)]
pub struct MicroBatch<T: Real> {
    pub loss: f64,
    pub breakdown: LossBreakdown,
    /// Gradients of `loss · scale`, indexed like the model's parameters.
    pub grads: Vec<Option<Tensor<T>>>,
    /// Time masks of nonzero width applied to the input.
    pub time_masks: usize,
}

/// Forward and backward one batch under `plan`, scaling the loss by `scale`
/// before backward.
#[allow(clippy::too_many_arguments)]
pub fn micro_batch<T: Real>(
    model: &Model<T>,
    batch: &Batch,
    plan: &MixPlan,
    spec: &SpecAugmentConfig,
    dropout: Rng,
    augment: &mut Rng,
    loss_cfg: &LossConfig,
    scale: f64,
) -> Result<MicroBatch<T>> {
    let mut s = Session::new(model, true, dropout);
    let trace = s.encode(batch, plan, spec, augment)?;
    let (loss, breakdown) = mixed_loss(&mut s, &trace, &batch.labels, loss_cfg)?;
    let value = s.graph.value(loss).item().f64();
    let root = s.graph.scale(loss, T::c(scale));
    s.graph.backward(root)?;
    Ok(MicroBatch {
        loss: value,
        breakdown,
        grads: s.take_gradients(),
        time_masks: trace
            .augment
            .iter()
            .map(|o| o.time_masks.iter().filter(|m| m.1 > 0).count())
            .sum(),
    })
}

/// Callback payloads during [`train`].
#[derive(Debug)]
pub enum Progress<'a> {
    Step(&'a StepRecord),
    Eval(&'a EvalRecord, &'a EvalReport),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub log: RunLog,
    /// Copy of the model at its best attention-decoder evaluation.
    pub best: Option<Model<T>>,
}

fn check_labels(dataset: &[Utterance], vocab_size: usize) -> Result<()> {
    for u in dataset {
        if let Some(&bad) = u.tokens.iter().find(|&&t| t == 0 || t + 1 >= vocab_size) {
            return Err(Error::Input(format!(
                "utterance {} has token {bad}, outside the {} spoken ids of the model vocabulary",
                u.id,
                vocab_size.saturating_sub(2)
            )));
        }
    }
    Ok(())
}

/// Train `model` in place.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_set: &[Utterance],
    eval_set: &[Utterance],
    cfg: &TrainConfig,
    mut progress: impl FnMut(Progress<'_>),
) -> Result<TrainOutcome<T>> {
    let k = model.config().encoder_layers;
    cfg.validate(k)?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    check_labels(train_set, model.config().vocab_size)?;
    check_labels(eval_set, model.config().vocab_size)?;
    check_alignable(train_set, subsampled_len)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let streams = Streams::new(cfg.seed);
    let mut opt = Optimizer::new(model, cfg.optim)?;
    let scale = 1.0 / cfg.optim.accum_steps as f64;
    let mut log = RunLog {
        stats: MixStats::new(k),
        ..RunLog::default()
    };
    let mut best: Option<(f64, Model<T>)> = None;
    let mut ordinal = 0u64;
    for epoch in 1..=cfg.epochs {
        let order_seed = streams.indexed(StreamKind::DataOrder, epoch as u64).random::<u64>();
        for batch in make_batches(train_set, cfg.max_elements, order_seed)? {
            let plan = match &cfg.mixup {
                Some(m) => MixPlan::sample(m, batch.size(), &mut streams.indexed(StreamKind::Mixup, ordinal))?,
                None => MixPlan::off(batch.size()),
            };
            let step = ordinal as usize + 1;
            let mb = micro_batch(
                model,
                &batch,
                &plan,
                &cfg.spec_augment,
                streams.indexed(StreamKind::Dropout, ordinal),
                &mut streams.indexed(StreamKind::Augment, ordinal),
                &cfg.loss,
                scale,
            )
            .map_err(|e| match e {
                Error::Numeric(_) => Error::Divergence { step, loss: f64::NAN },
                e => e,
            })?;
            if !mb.loss.is_finite() {
                return Err(Error::Divergence { step, loss: mb.loss });
            }
            ordinal += 1;
            let lr = opt.next_lr();
            opt.accumulate(mb.grads)?;
            if opt.ready() {
                opt.apply(model);
            }
            let layer = plan.apply.then_some(plan.layer);
            let lambda = plan.apply.then_some(plan.lambda);
            log.stats.record(layer, lambda, mb.time_masks);
            log.steps.push(StepRecord {
                step,
                loss: mb.loss,
                ctc: mb.breakdown.ctc,
                ce: mb.breakdown.ce,
                lambda,
                layer,
                lr,
            });
            progress(Progress::Step(log.steps.last().unwrap()));
        }
        if epoch == cfg.epochs && opt.pending() > 0 {
            opt.apply(model);
        }
        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) && !eval_set.is_empty() {
            let report = evaluate(model, eval_set, cfg.max_elements)?;
            let record = EvalRecord {
                epoch,
                ter_att: report.attention.utterance_mean,
                ter_ctc: report.ctc.utterance_mean,
            };
            if best.as_ref().is_none_or(|(b, _)| record.ter_att < *b) {
                best = Some((record.ter_att, model.clone()));
                if let Some(dir) = &cfg.checkpoint_dir {
                    save_checkpoint(model, &dir.join("best.mxrc"))?;
                }
            }
            progress(Progress::Eval(&record, &report));
            log.evals.push(record);
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        save_checkpoint(model, &dir.join("last.mxrc"))?;
    }
    Ok(TrainOutcome {
        log,
        best: best.map(|b| b.1),
    })
}

#[cfg(test)]
mod tests;
