//! Experiment commands behind the `mixrep` binary.
//!
//! Every command takes an [`ExperimentConfig`] and writes its artifacts
//! under the config's output directory:
//!
//! | command | writes |
//! |---|---|
//! | [`cmd_gen_data`] | `vocab.txt`, `train.tsv`, `eval.tsv`, `feats/` in the data directory |
//! | [`cmd_train`] | `config.txt`, `runlog.txt`, `best.mxrc`, `last.mxrc` |
//! | [`cmd_eval`] | `eval.txt`, `eval_hyps.tsv` |
//! | [`cmd_sweep_layers`] | one training directory per run under `sweep/`, plus `sweep/report.txt` and `sweep/plot.tsv` |
//! | [`cmd_preview_augment`] | `preview/<id>.{orig,specaug,mix}.mxrf` |
//!
//! Artifacts depend only on the config, so reruns reproduce them byte for
//! byte.

pub mod cli;
mod config;
mod sweep;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;

pub use config::{ExperimentConfig, Mode, Precision};
pub use sweep::{cmd_sweep_layers, select_set, SweepReport, SweepRow};

use crate::augment::{mix_rows, spec_augment, AugmentOutcome};
use crate::dataio::{
    check_alignable, gen_synthetic, load_manifest, write_dataset, write_features, Batch, SynthConfig, Utterance,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::{checkpoint_width, load_checkpoint, subsampled_len, Model};
use crate::rng::{StreamKind, Streams};
use crate::tensor::Real;
use crate::trainer::{evaluate, train, EvalReport, Progress, RunLog};

/// A generated dataset read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Utterance>,
    pub eval: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenDataSummary {
    pub dir: PathBuf,
    pub train: usize,
    pub eval: usize,
    pub frames: usize,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub log: RunLog,
    pub parameters: usize,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: EvalReport,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Preview {
    pub original: PathBuf,
    pub augmented: PathBuf,
    pub mixed: PathBuf,
    pub partner: String,
    pub outcome: AugmentOutcome,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Split configs: each split gets its own generator seed, drawn from the
/// data seed, and its own id prefix so both share one `feats/` directory.
fn split_configs(cfg: &ExperimentConfig) -> [(&'static str, SynthConfig); 2] {
    let streams = Streams::new(cfg.data.seed);
    let split = |index: u64, n: usize| SynthConfig {
        num_utterances: n,
        seed: streams.indexed(StreamKind::Synth, index).random(),
        ..cfg.data.clone()
    };
    [
        ("train", split(0, cfg.data.num_utterances)),
        ("eval", split(1, cfg.eval_utterances)),
    ]
}

/// Generate both splits and write them to the data directory.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<GenDataSummary> {
    cfg.validate()?;
    let dir = cfg.data_dir();
    let vocab = Vocabulary::synthetic(cfg.data.vocab_size)?;
    let mut counts = [0usize; 2];
    let mut frames = 0;
    for (n, (name, split)) in split_configs(cfg).into_iter().enumerate() {
        let mut utts = gen_synthetic(&split)?;
        for (i, u) in utts.iter_mut().enumerate() {
            u.id = format!("{name}{i:05}");
        }
        check_alignable(&utts, subsampled_len)?;
        frames += utts.iter().map(Utterance::frames).sum::<usize>();
        counts[n] = utts.len();
        create_dir(&dir)?;
        write_dataset(&dir, name, &utts, &vocab)?;
    }
    vocab.save(&dir.join("vocab.txt"))?;
    Ok(GenDataSummary {
        dir,
        train: counts[0],
        eval: counts[1],
        frames,
    })
}

/// Read the dataset written by [`cmd_gen_data`] and check it against the
/// model settings.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
    if vocab.len() != cfg.data.vocab_size {
        return Err(Error::Config(format!(
            "{} lists {} tokens but data.vocab_size is {}",
            dir.join("vocab.txt").display(),
            vocab.len(),
            cfg.data.vocab_size
        )));
    }
    let train = load_manifest(&dir.join("train.tsv"), &vocab)?;
    let eval = load_manifest(&dir.join("eval.tsv"), &vocab)?;
    if let Some(u) = train.iter().chain(&eval).find(|u| u.feature_dim() != cfg.data.feature_dim) {
        return Err(Error::Config(format!(
            "utterance {} has {} feature bins but data.feature_dim is {}",
            u.id,
            u.feature_dim(),
            cfg.data.feature_dim
        )));
    }
    Ok(Dataset { vocab, train, eval })
}

fn train_as<T: Real>(cfg: &ExperimentConfig, data: &Dataset, report: &mut dyn FnMut(&str)) -> Result<(RunLog, usize)> {
    let streams = Streams::new(cfg.seed);
    let mut model = Model::<T>::new(&cfg.model_config(), &mut streams.stream(StreamKind::Init))?;
    let parameters = model.parameter_count();
    let outcome = train(&mut model, &data.train, &data.eval, &cfg.train_config(), |p| {
        if let Progress::Eval(record, _) = p {
            report(&record.to_string());
        }
    })?;
    Ok((outcome.log, parameters))
}

/// Train on an already loaded dataset.
pub fn train_on(cfg: &ExperimentConfig, data: &Dataset, report: &mut dyn FnMut(&str)) -> Result<TrainSummary> {
    cfg.validate()?;
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join("config.txt"), &cfg.to_string())?;
    let (log, parameters) = match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, data, report)?,
        Precision::F64 => train_as::<f64>(cfg, data, report)?,
    };
    write_text(&cfg.out.join("runlog.txt"), &log.to_string())?;
    Ok(TrainSummary {
        dir: cfg.out.clone(),
        log,
        parameters,
    })
}

/// Train from the generated dataset; `report` receives one line per
/// evaluation.
pub fn cmd_train(cfg: &ExperimentConfig, report: &mut dyn FnMut(&str)) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    train_on(cfg, &data, report)
}

fn eval_as<T: Real>(checkpoint: &Path, vocab: &Vocabulary, manifest: &Path, max_elements: usize) -> Result<EvalReport> {
    let model = load_checkpoint::<T>(checkpoint)?;
    if model.config().vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "checkpoint {} was trained on {} tokens, the manifest vocabulary has {}",
            checkpoint.display(),
            model.config().vocab_size,
            vocab.len()
        )));
    }
    evaluate(&model, &load_manifest(manifest, vocab)?, max_elements)
}

/// Score a checkpoint on a manifest under both decoders. The vocabulary is
/// read from `vocab.txt` next to the manifest.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, manifest: &Path) -> Result<EvalSummary> {
    let width = checkpoint_width(checkpoint)?;
    let vocab_path = manifest.parent().unwrap_or(Path::new(".")).join("vocab.txt");
    let vocab = Vocabulary::load(&vocab_path)?;
    let report = if width == 8 {
        eval_as::<f64>(checkpoint, &vocab, manifest, cfg.max_elements)?
    } else {
        eval_as::<f32>(checkpoint, &vocab, manifest, cfg.max_elements)?
    };

    let mut text = String::new();
    let _ = writeln!(text, "utterances={}", report.attention.utterances);
    let _ = writeln!(
        text,
        "ter_att={} corpus_att={}",
        report.attention.utterance_mean, report.attention.corpus
    );
    let _ = writeln!(text, "ter_ctc={} corpus_ctc={}", report.ctc.utterance_mean, report.ctc.corpus);
    let mut hyps = String::from("id\treference\tattention\tctc\n");
    for (id, r, a, c) in &report.hypotheses {
        let _ = writeln!(hyps, "{id}\t{}\t{}\t{}", vocab.render(r), vocab.render(a), vocab.render(c));
    }
    create_dir(&cfg.out)?;
    let path = cfg.out.join("eval.txt");
    write_text(&path, &text)?;
    write_text(&cfg.out.join("eval_hyps.tsv"), &hyps)?;
    Ok(EvalSummary { report, path })
}

/// Write one utterance as it enters the model: untouched, after the mode's
/// SpecAugment, and mixed half and half with a random partner from the
/// same split.
pub fn cmd_preview_augment(cfg: &ExperimentConfig, id: &str) -> Result<Preview> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let split = [&data.train, &data.eval]
        .into_iter()
        .find(|s| s.iter().any(|u| u.id == id))
        .ok_or_else(|| Error::Input(format!("no utterance with id {id:?} in {}", cfg.data_dir().display())))?;
    let index = split.iter().position(|u| u.id == id).unwrap();
    let utt = &split[index];

    let streams = Streams::new(cfg.seed);
    let mut augmented = utt.features.clone();
    let outcome = spec_augment(
        &mut augmented,
        utt.frames(),
        &cfg.spec_for_mode(),
        &mut streams.indexed(StreamKind::Preview, 0),
    );
    let partner = if split.len() > 1 {
        let j = streams.indexed(StreamKind::Preview, 1).random_range(0..split.len() - 1);
        &split[if j >= index { j + 1 } else { j }]
    } else {
        utt
    };
    let pair = Batch::collate(&[utt, partner])?;
    let mixed = mix_rows(&pair.features, 0.5, &[1, 0])?.index0(0)?;

    let dir = cfg.out.join("preview");
    create_dir(&dir)?;
    let path = |kind: &str| dir.join(format!("{id}.{kind}.mxrf"));
    write_features(&utt.features, &path("orig"))?;
    write_features(&augmented, &path("specaug"))?;
    write_features(&mixed, &path("mix"))?;
    Ok(Preview {
        original: path("orig"),
        augmented: path("specaug"),
        mixed: path("mix"),
        partner: partner.id.clone(),
        outcome,
    })
}

#[cfg(test)]
mod tests;
