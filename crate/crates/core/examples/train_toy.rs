//! Train the toy recognizer end to end and score it.
//!
//! ```text
//! cargo run --release --example train_toy [epochs] [out_dir]
//! ```
//!
//! The defaults (25 epochs) take a minute or two on one core.

use std::path::PathBuf;

use mixrep::harness::{cmd_eval, cmd_gen_data, cmd_train, ExperimentConfig};

fn main() -> mixrep::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(25, |s| s.parse().expect("epochs"));
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mixrep-toy"));
    let mut cfg = ExperimentConfig::default().with_overrides(None, Some(out), false);
    cfg.epochs = epochs;

    cmd_gen_data(&cfg)?;
    let run = cmd_train(&cfg, &mut |line| println!("{line}"))?;
    let best = run.log.best_eval().expect("at least one evaluation");
    println!("best epoch {} with {:.2}% attention token error", best.epoch, best.ter_att);

    let eval = cmd_eval(&cfg, &cfg.out.join("last.mxrc"), &cfg.data_dir().join("eval.tsv"))?;
    println!(
        "final model: attention {:.2}%, ctc {:.2}%",
        eval.report.attention.utterance_mean, eval.report.ctc.utterance_mean
    );
    for (id, reference, att, _) in eval.report.hypotheses.iter().take(3) {
        println!("{id}: ref {reference:?} hyp {att:?}");
    }
    Ok(())
}
