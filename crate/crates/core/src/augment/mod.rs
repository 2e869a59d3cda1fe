//! Input regularization and the sampling side of representation mixup.

mod mixup;
mod specaug;

pub use mixup::{
    decide_apply, mix_lengths, mix_rows, mixup, sample_lambda, sample_layer, MixPlan, MixupConfig,
};
pub use specaug::{
    apply_time_warp, spec_augment, spec_augment_batch, time_warp, AugmentOutcome, SpecAugmentConfig,
};
