//! One training forward/backward pass with the batch mixed at each encoder
//! layer in turn, and a check that a mix weight of 1 reproduces the
//! unmixed pass exactly.
//!
//! ```text
//! cargo run --release --example mixup_step
//! ```

use mixrep::augment::{MixPlan, SpecAugmentConfig};
use mixrep::dataio::{gen_synthetic, Batch, SynthConfig};
use mixrep::losses::LossConfig;
use mixrep::model::{Model, ModelConfig};
use mixrep::rng::{Rng, StreamKind, Streams};
use mixrep::trainer::micro_batch;

fn main() -> mixrep::Result<()> {
    let data = gen_synthetic(&SynthConfig {
        num_utterances: 4,
        ..SynthConfig::default()
    })?;
    let batch = Batch::collate(&data.iter().collect::<Vec<_>>())?;
    let streams = Streams::new(1);
    let cfg = ModelConfig::default();
    let model: Model<f64> = Model::new(&cfg, &mut streams.stream(StreamKind::Init))?;
    let spec = SpecAugmentConfig::off();
    let pass = |plan: &MixPlan| {
        let mut augment: Rng = streams.stream(StreamKind::Augment);
        micro_batch(&model, &batch, plan, &spec, streams.stream(StreamKind::Dropout), &mut augment, &LossConfig::default(), 1.0)
    };

    let plain = pass(&MixPlan::off(4))?;
    println!("unmixed            loss {:.6}", plain.loss);
    let partner = vec![2, 3, 0, 1];
    for k in 0..=cfg.encoder_layers {
        let mb = pass(&MixPlan::fixed(k, 0.7, partner.clone()))?;
        println!(
            "mixed at layer {k}   loss {:.6}  (ctc {:.4}, ce {:.4})",
            mb.loss, mb.breakdown.ctc, mb.breakdown.ce
        );
    }
    let unit = pass(&MixPlan::fixed(2, 1.0, partner))?;
    let same = unit.loss.to_bits() == plain.loss.to_bits()
        && unit.grads.iter().zip(&plain.grads).all(|(a, b)| a == b);
    println!("lambda = 1 matches the unmixed pass bitwise: {same}");
    Ok(())
}
