//! Per-layer mixup sweep on the toy task, then the layer-set selection.
//!
//! ```text
//! cargo run --release --example layer_sweep [epochs] [out_dir]
//! ```
//!
//! Trains K + 2 models; a short run (the default is 6 epochs) is enough to
//! see the report format, not to rank layers reliably.

use std::path::PathBuf;

use mixrep::harness::{cmd_gen_data, cmd_sweep_layers, ExperimentConfig, Mode};

fn main() -> mixrep::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(6, |s| s.parse().expect("epochs"));
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mixrep-sweep"));
    let mut cfg = ExperimentConfig::default().with_overrides(None, Some(out), false);
    cfg.epochs = epochs;
    cfg.mode = Mode::MixrepTimeEnhanced;
    cfg.mixup.tau = 0.45;
    cfg.mixup.layers = vec![0];

    cmd_gen_data(&cfg)?;
    let report = cmd_sweep_layers(&cfg, &mut |line| {
        if line.starts_with("==") {
            println!("{line}");
        }
    })?;
    print!("\n{report}");
    println!("plot data in {}", cfg.out.join("sweep/plot.tsv").display());
    Ok(())
}
