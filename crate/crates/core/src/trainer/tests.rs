use rand::SeedableRng;

use super::*;
use crate::dataio::{gen_synthetic, SynthConfig};
use crate::model::{load_checkpoint, ModelConfig};

fn data(n: usize, seed: u64) -> Vec<Utterance> {
    data_with(n, seed, 1, 3)
}

fn data_with(n: usize, seed: u64, tokens_min: usize, tokens_max: usize) -> Vec<Utterance> {
    gen_synthetic(&SynthConfig {
        vocab_size: 6,
        num_utterances: n,
        tokens_min,
        tokens_max,
        frames_per_token_min: 8,
        frames_per_token_max: 10,
        feature_dim: 8,
        noise_std: 0.1,
        seed,
    })
    .unwrap()
}

fn model_cfg(dropout: f64) -> ModelConfig {
    ModelConfig {
        feature_dim: 8,
        model_dim: 8,
        encoder_layers: 2,
        decoder_layers: 1,
        heads: 2,
        ffn_dim: 16,
        conv_kernel: 3,
        dropout,
        vocab_size: 6,
        subsample_channels: 4,
        max_target_len: 12,
    }
}

fn model<T: Real>(dropout: f64) -> Model<T> {
    Model::new(&model_cfg(dropout), &mut Rng::seed_from_u64(3)).unwrap()
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        optim: OptimConfig {
            accum_steps: 2,
            warmup_steps: 4,
            peak_lr: 1e-3,
            ..OptimConfig::default()
        },
        max_elements: 4 * 40 * 8,
        mixup: Some(MixupConfig {
            tau: 0.5,
            layers: vec![0, 1, 2],
            ..MixupConfig::default()
        }),
        ..TrainConfig::default()
    }
}

fn bits<T: Real>(m: &Model<T>) -> Vec<u64> {
    m.params()
        .values()
        .iter()
        .flat_map(|t| t.data().iter().map(|x| x.f64().to_bits()))
        .collect()
}

#[test]
fn runs_are_reproducible() {
    let train_set = data(16, 1);
    let eval_set = data(4, 2);
    for cfg in [
        train_cfg(),
        TrainConfig {
            mixup: None,
            spec_augment: SpecAugmentConfig::off(),
            ..train_cfg()
        },
    ] {
        let run = || {
            let mut m = model::<f64>(0.1);
            let out = train(&mut m, &train_set, &eval_set, &cfg, |_| {}).unwrap();
            (out.log.to_string(), bits(&m))
        };
        let (log_a, params_a) = run();
        let (log_b, params_b) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(params_a, params_b);
        assert!(log_a.lines().any(|l| l.starts_with("epoch=1 ")));
    }
}

#[test]
fn accumulation_matches_concatenation() {
    // equal row counts and equal label positions in both halves, so the
    // per-half means average to the whole-batch mean
    let mut utts = data_with(4, 5, 3, 3);
    utts[0].tokens = vec![1, 2];
    utts[1].tokens = vec![3, 4, 1];
    utts[2].tokens = vec![2];
    utts[3].tokens = vec![4, 3, 2, 1];
    let refs: Vec<&Utterance> = utts.iter().collect();
    let whole = Batch::collate(&refs).unwrap();
    let halves = [Batch::collate(&refs[..2]).unwrap(), Batch::collate(&refs[2..]).unwrap()];
    let spec = SpecAugmentConfig::off();
    let loss = LossConfig::default();
    let step = |batch: &Batch, m: &Model<f64>, scale: f64| {
        micro_batch(m, batch, &MixPlan::off(batch.size()), &spec, Rng::seed_from_u64(0), &mut Rng::seed_from_u64(0), &loss, scale)
            .unwrap()
    };
    let optim = |accum_steps| OptimConfig {
        accum_steps,
        warmup_steps: 1,
        peak_lr: 1e-2,
        ..OptimConfig::default()
    };

    let mut a = model::<f64>(0.0);
    let mut opt = Optimizer::new(&a, optim(2)).unwrap();
    for h in &halves {
        let g = step(h, &a, 0.5).grads;
        opt.accumulate(g).unwrap();
    }
    assert!(opt.ready());
    let acc_a: Vec<f64> = opt.accumulated().iter().flat_map(|t| t.data().to_vec()).collect();
    opt.apply(&mut a);

    let mut b = model::<f64>(0.0);
    let mut opt = Optimizer::new(&b, optim(1)).unwrap();
    let g = step(&whole, &b, 1.0).grads;
    opt.accumulate(g).unwrap();
    let acc_b: Vec<f64> = opt.accumulated().iter().flat_map(|t| t.data().to_vec()).collect();
    opt.apply(&mut b);

    for (x, y) in acc_a.iter().zip(&acc_b) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
    for (x, y) in a.params().values().iter().zip(b.params().values()) {
        assert!(x.max_abs_diff(y) < 1e-6);
    }
}

#[test]
fn unit_lambda_step_matches_plain_step() {
    let m = model::<f32>(0.1);
    let utts = data(3, 7);
    let refs: Vec<&Utterance> = utts.iter().collect();
    let batch = Batch::collate(&refs).unwrap();
    let spec = SpecAugmentConfig::default();
    let update = |plan: &MixPlan| {
        let mut m = m.clone();
        let mb = micro_batch(&m, &batch, plan, &spec, Rng::seed_from_u64(1), &mut Rng::seed_from_u64(2), &LossConfig::default(), 1.0)
            .unwrap();
        let mut opt = Optimizer::new(&m, OptimConfig { accum_steps: 1, ..OptimConfig::default() }).unwrap();
        opt.accumulate(mb.grads).unwrap();
        opt.apply(&mut m);
        (mb.loss.to_bits(), bits(&m))
    };
    let plain = update(&MixPlan::off(3));
    for k in 0..=2 {
        assert_eq!(update(&MixPlan::fixed(k, 1.0, vec![2, 0, 1])), plain, "k={k}");
    }
}

#[test]
fn baseline_and_basic_modes_log_nothing_extra() {
    let train_set = data(12, 8);
    let cfg = TrainConfig {
        mixup: None,
        spec_augment: SpecAugmentConfig {
            time_enabled: false,
            ..SpecAugmentConfig::default()
        },
        ..train_cfg()
    };
    let mut m = model::<f32>(0.1);
    let out = train(&mut m, &train_set, &[], &cfg, |_| {}).unwrap();
    assert_eq!(out.log.stats.mixed, 0);
    assert_eq!(out.log.stats.time_masks, 0);
    assert!(out.log.steps.iter().all(|s| s.lambda.is_none() && s.layer.is_none()));
    assert_eq!(out.log.stats.batches, out.log.steps.len());
    assert!(out.log.evals.is_empty() && out.best.is_none());
}

#[test]
fn per_layer_counts_sum_to_mixed_batches() {
    let train_set = data(24, 9);
    let cfg = TrainConfig {
        epochs: 2,
        ..train_cfg()
    };
    let mut m = model::<f32>(0.1);
    let out = train(&mut m, &train_set, &[], &cfg, |_| {}).unwrap();
    let s = &out.log.stats;
    assert_eq!(s.per_layer.iter().sum::<usize>(), s.mixed);
    assert_eq!(s.lambda_hist.iter().sum::<usize>(), s.mixed);
    assert_eq!(out.log.lambdas().len(), s.mixed);
    assert!(s.time_masks > 0);
}

#[test]
fn nan_parameters_abort_as_divergence() {
    let mut m = model::<f32>(0.0);
    let last = m.params().len() - 1;
    m.params_mut().values_mut()[last].data_mut()[0] = f32::NAN;
    let err = train(&mut m, &data(4, 10), &[], &train_cfg(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::Divergence { step: 1, .. }), "{err}");
}

#[test]
fn foreign_tokens_are_rejected() {
    let mut utts = data(4, 11);
    utts[2].tokens = vec![5];
    let err = train(&mut model::<f32>(0.0), &utts, &[], &train_cfg(), |_| {}).unwrap_err();
    assert!(matches!(err, Error::Input(_)));
}

#[test]
fn best_checkpoint_reproduces_logged_metric() {
    let dir = tempfile::tempdir().unwrap();
    let train_set = data(12, 12);
    let eval_set = data(6, 13);
    let cfg = TrainConfig {
        epochs: 3,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..train_cfg()
    };
    let mut m = model::<f32>(0.1);
    let out = train(&mut m, &train_set, &eval_set, &cfg, |_| {}).unwrap();
    assert_eq!(out.log.evals.len(), 3);
    let best: Model<f32> = load_checkpoint(&dir.path().join("best.mxrc")).unwrap();
    assert_eq!(best.params(), out.best.as_ref().unwrap().params());
    let report = evaluate(&best, &eval_set, cfg.max_elements).unwrap();
    assert_eq!(report.attention.utterance_mean, out.log.best_eval().unwrap().ter_att);
    let last: Model<f32> = load_checkpoint(&dir.path().join("last.mxrc")).unwrap();
    assert_eq!(last.params(), m.params());
}
