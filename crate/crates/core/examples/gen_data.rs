//! Generate a small synthetic corpus, write it to disk and read it back.
//!
//! ```text
//! cargo run --release --example gen_data [out_dir]
//! ```

use std::path::PathBuf;

use mixrep::dataio::read_features;
use mixrep::harness::{cmd_gen_data, load_dataset, ExperimentConfig};

fn main() -> mixrep::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mixrep-gen-data"));
    let mut cfg = ExperimentConfig::default().with_overrides(None, Some(out), false);
    cfg.data.num_utterances = 40;
    cfg.eval_utterances = 10;

    let summary = cmd_gen_data(&cfg)?;
    println!(
        "{} train + {} eval utterances, {} frames, in {}",
        summary.train,
        summary.eval,
        summary.frames,
        summary.dir.display()
    );

    let data = load_dataset(&cfg)?;
    for u in data.train.iter().take(3) {
        println!("{}  {:>3} frames  {}", u.id, u.frames(), data.vocab.render(&u.tokens));
    }
    let first = &data.train[0];
    let reread = read_features(&summary.dir.join(format!("feats/{}.mxrf", first.id)))?;
    println!("feature file round trip exact: {}", reread == first.features);
    Ok(())
}
