//! Argument parsing and dispatch for the `mixrep` binary.
//!
//! Exit codes: 0 on success, 1 for invalid input (arguments, configs, data
//! files), 2 when a computation fails.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::{
    cmd_eval, cmd_gen_data, cmd_preview_augment, cmd_sweep_layers, cmd_train, ExperimentConfig,
};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mixrep", version, about = "Hidden-representation mixup experiments on synthetic speech")]
struct Cli {
    /// Experiment config (`key = value` lines); built-in toy settings if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Compute in f64.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic train and eval splits.
    GenData,
    /// Train one model.
    Train,
    /// Score a checkpoint with both decoders.
    Eval {
        /// Defaults to `<out>/best.mxrc`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the eval split of the data directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Baseline plus one mixup run per encoder layer.
    SweepLayers,
    /// Write one utterance before and after augmentation.
    PreviewAugment {
        /// Utterance id as listed in the manifest.
        id: String,
    },
}

fn dispatch(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.with_overrides(cli.seed, cli.out, cli.deterministic);
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let mut say = |line: &str| println!("{line}");
    match cli.command {
        Command::GenData => {
            let s = cmd_gen_data(&cfg)?;
            println!(
                "wrote {} train and {} eval utterances ({} frames) to {}",
                s.train,
                s.eval,
                s.frames,
                s.dir.display()
            );
        }
        Command::Train => {
            let s = cmd_train(&cfg, &mut say)?;
            let best = s.log.best_eval().ok_or_else(|| Error::UndefinedMetric("no evaluation ran".into()))?;
            println!(
                "{} parameters; best ter_att={:.2} at epoch {}; stats: {}",
                s.parameters, best.ter_att, best.epoch, s.log.stats
            );
            println!("artifacts in {}", s.dir.display());
        }
        Command::Eval { checkpoint, manifest } => {
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.out.join("best.mxrc"));
            let manifest = manifest.unwrap_or_else(|| cfg.data_dir().join("eval.tsv"));
            let s = cmd_eval(&cfg, &checkpoint, &manifest)?;
            let (a, c) = (&s.report.attention, &s.report.ctc);
            println!("utterances {}", a.utterances);
            println!("attention  ter={:.2} corpus={:.2}", a.utterance_mean, a.corpus);
            println!("ctc        ter={:.2} corpus={:.2}", c.utterance_mean, c.corpus);
            println!("report in {}", s.path.display());
        }
        Command::SweepLayers => {
            let r = cmd_sweep_layers(&cfg, &mut say)?;
            print!("{r}");
        }
        Command::PreviewAugment { id } => {
            let p = cmd_preview_augment(&cfg, &id)?;
            println!("partner {}", p.partner);
            for path in [&p.original, &p.augmented, &p.mixed] {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

/// Run the command line `args` (program name first) and return the exit
/// code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
