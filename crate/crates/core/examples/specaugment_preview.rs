//! SpecAugment on one synthetic utterance, drawn as a character grid
//! (rows are feature bins, columns frames, `.` a masked cell).
//!
//! ```text
//! cargo run --release --example specaugment_preview
//! ```

use mixrep::augment::{spec_augment, SpecAugmentConfig};
use mixrep::dataio::{SynthConfig, Synthesizer};
use mixrep::Tensor;
use rand::SeedableRng;

fn draw(x: &Tensor<f32>) {
    let (t, f) = (x.shape()[0], x.shape()[1]);
    for d in (0..f).rev() {
        let line: String = (0..t)
            .map(|i| match x.row(i)[d] {
                v if v == 0.0 => '.',
                v if v > 0.3 => '#',
                v if v > 0.1 => '+',
                _ => ' ',
            })
            .collect();
        println!("{d:>2} |{line}|");
    }
}

fn main() -> mixrep::Result<()> {
    let synth = Synthesizer::new(&SynthConfig::default())?;
    let mut rng = mixrep::rng::Rng::seed_from_u64(4);
    let x = synth.render(&[1, 4, 7, 10, 2], &mut rng);
    println!("original, {} frames:", x.shape()[0]);
    draw(&x);

    let cfg = SpecAugmentConfig {
        freq_enabled: true,
        ..SpecAugmentConfig::default()
    };
    let mut y = x.clone();
    let outcome = spec_augment(&mut y, x.shape()[0], &cfg, &mut rng);
    println!(
        "\naugmented: warp {:?}, time masks {:?}, freq masks {:?}",
        outcome.warp, outcome.time_masks, outcome.freq_masks
    );
    draw(&y);
    Ok(())
}
