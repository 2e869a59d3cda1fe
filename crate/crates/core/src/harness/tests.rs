use std::fs;
use std::path::Path;

use super::*;
use crate::dataio::read_features;
use crate::trainer::RunLog;

fn tiny(out: &Path) -> ExperimentConfig {
    let text = format!(
        "out = {0}
data.dir = {0}/data
data.vocab_size = 6
data.feature_dim = 8
data.train_utterances = 10
data.eval_utterances = 4
data.tokens_min = 2
data.tokens_max = 3
model.dim = 16
model.encoder_layers = 2
model.decoder_layers = 1
model.ffn_dim = 32
model.conv_kernel = 3
model.subsample_channels = 4
train.epochs = 2
train.warmup_steps = 10
train.max_elements = 1024
mixup.tau = 0.5
",
        out.display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

fn quiet() -> impl FnMut(&str) {
    |_: &str| {}
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn gen_data_writes_both_splits_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    let s = cmd_gen_data(&cfg).unwrap();
    assert_eq!((s.train, s.eval), (10, 4));
    let dir = cfg.data_dir();
    assert_eq!(fs::read_to_string(dir.join("train.tsv")).unwrap().lines().count(), 10);
    assert_eq!(fs::read_dir(dir.join("feats")).unwrap().count(), 14);

    let first = read_dir_bytes(&dir);
    cmd_gen_data(&cfg).unwrap();
    assert_eq!(read_dir_bytes(&dir), first);

    let data = load_dataset(&cfg).unwrap();
    assert_eq!(data.train.len(), 10);
    assert!(data.train[0].id.starts_with("train") && data.eval[0].id.starts_with("eval"));
    assert!(data.train.iter().all(|u| u.feature_dim() == 8));
}

#[test]
fn dataset_must_match_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    cmd_gen_data(&cfg).unwrap();
    let mut other = cfg.clone();
    other.data.vocab_size = 7;
    assert!(matches!(load_dataset(&other), Err(Error::Config(_))));
    let mut missing = cfg.clone();
    missing.data_dir = Some(tmp.path().join("nowhere"));
    assert!(matches!(cmd_train(&missing, &mut quiet()), Err(Error::Io { .. })));
}

#[test]
fn modes_show_up_in_run_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cmd_gen_data(&cfg).unwrap();

    cfg.out = tmp.path().join("base");
    let base = cmd_train(&cfg, &mut quiet()).unwrap();
    assert_eq!(base.log.stats.mixed, 0);
    assert!(base.log.stats.time_masks > 0);
    let text = fs::read_to_string(cfg.out.join("runlog.txt")).unwrap();
    assert_eq!(text.parse::<RunLog>().unwrap(), base.log);
    assert_eq!(ExperimentConfig::load(&cfg.out.join("config.txt")).unwrap(), cfg);

    cfg.mode = Mode::MixrepBasic;
    cfg.mixup.layers = vec![0, 2];
    cfg.out = tmp.path().join("basic");
    let basic = cmd_train(&cfg, &mut quiet()).unwrap();
    assert_eq!(basic.log.stats.time_masks, 0);
    assert!(basic.log.stats.mixed > 0);
}

#[test]
fn eval_reproduces_the_best_logged_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.epochs = 3;
    cmd_gen_data(&cfg).unwrap();
    let run = cmd_train(&cfg, &mut quiet()).unwrap();
    let best = run.log.best_eval().unwrap().clone();
    let manifest = cfg.data_dir().join("eval.tsv");
    let s = cmd_eval(&cfg, &cfg.out.join("best.mxrc"), &manifest).unwrap();
    assert_eq!(s.report.attention.utterance_mean.to_bits(), best.ter_att.to_bits());
    assert_eq!(s.report.ctc.utterance_mean.to_bits(), best.ter_ctc.to_bits());
    assert!(fs::read_to_string(&s.path).unwrap().contains("ter_att="));

    let mut f64_cfg = cfg.clone();
    f64_cfg.precision = Precision::F64;
    f64_cfg.epochs = 1;
    f64_cfg.out = tmp.path().join("f64");
    let run = cmd_train(&f64_cfg, &mut quiet()).unwrap();
    let s = cmd_eval(&f64_cfg, &f64_cfg.out.join("last.mxrc"), &manifest).unwrap();
    assert_eq!(s.report.attention.utterance_mean, run.log.last_eval().unwrap().ter_att);
}

#[test]
fn eval_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.epochs = 1;
    cmd_gen_data(&cfg).unwrap();
    cmd_train(&cfg, &mut quiet()).unwrap();
    let ckpt = cfg.out.join("last.mxrc");

    let empty_dir = tmp.path().join("empty");
    fs::create_dir_all(&empty_dir).unwrap();
    fs::copy(cfg.data_dir().join("vocab.txt"), empty_dir.join("vocab.txt")).unwrap();
    fs::write(empty_dir.join("none.tsv"), "").unwrap();
    assert!(matches!(
        cmd_eval(&cfg, &ckpt, &empty_dir.join("none.tsv")),
        Err(Error::UndefinedMetric(_))
    ));

    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'X';
    let bad = tmp.path().join("bad.mxrc");
    fs::write(&bad, bytes).unwrap();
    let manifest = cfg.data_dir().join("eval.tsv");
    assert!(matches!(cmd_eval(&cfg, &bad, &manifest), Err(Error::Format { offset: 0, .. })));

    let small = tmp.path().join("small");
    fs::create_dir_all(&small).unwrap();
    fs::write(small.join("vocab.txt"), "<blank>\na\nb\n<sos/eos>\n").unwrap();
    fs::write(small.join("m.tsv"), "").unwrap();
    assert!(matches!(cmd_eval(&cfg, &ckpt, &small.join("m.tsv")), Err(Error::Config(_))));
}

#[test]
fn preview_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cmd_gen_data(&cfg).unwrap();

    let p = cmd_preview_augment(&cfg, "train00003").unwrap();
    let orig = read_features(&p.original).unwrap();
    let aug = read_features(&p.augmented).unwrap();
    let mix = read_features(&p.mixed).unwrap();
    let data = load_dataset(&cfg).unwrap();
    let utt = data.train.iter().find(|u| u.id == "train00003").unwrap();
    let partner = data.train.iter().find(|u| u.id == p.partner).unwrap();
    assert_ne!(partner.id, utt.id);
    assert_eq!(orig, utt.features);
    assert_eq!(aug.shape(), orig.shape());
    assert!(!p.outcome.time_masks.is_empty());

    let frames = utt.frames().max(partner.frames());
    assert_eq!(mix.shape(), &[frames, 8]);
    for t in 0..frames {
        for d in 0..8 {
            let a = if t < utt.frames() { utt.features.row(t)[d] } else { 0.0 };
            let b = if t < partner.frames() { partner.features.row(t)[d] } else { 0.0 };
            assert_eq!(mix.row(t)[d], (a + b) / 2.0);
        }
    }

    cfg.spec_augment.time_enabled = false;
    cfg.spec_augment.freq_enabled = false;
    let p = cmd_preview_augment(&cfg, "eval00001").unwrap();
    assert!(p.partner.starts_with("eval"));
    assert_eq!(fs::read(&p.original).unwrap(), fs::read(&p.augmented).unwrap());

    assert!(matches!(cmd_preview_augment(&cfg, "utt9"), Err(Error::Input(_))));
}

#[test]
fn sweep_rows_match_their_run_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(tmp.path());
    cfg.epochs = 1;
    cmd_gen_data(&cfg).unwrap();
    let report = cmd_sweep_layers(&cfg, &mut quiet()).unwrap();
    assert_eq!(report.rows.len(), 2 + cfg.model.encoder_layers);
    let logs: Vec<RunLog> = report
        .rows
        .iter()
        .map(|r| fs::read_to_string(r.dir.as_ref().unwrap().join("runlog.txt")).unwrap().parse().unwrap())
        .collect();
    let base = logs[0].last_eval().unwrap().ter_att;
    for (r, log) in report.rows.iter().zip(&logs).skip(1) {
        let delta = base - log.last_eval().unwrap().ter_att;
        assert!((r.delta.unwrap() - delta).abs() < 1e-6);
        assert_eq!(log.steps.len(), logs[0].steps.len());
        let layers: Vec<usize> = log.steps.iter().filter_map(|s| s.layer).collect();
        assert!(layers.iter().all(|&k| Some(k) == r.layer));
    }
    assert_eq!(report.selected, select_set(&report).unwrap());
    let plot = fs::read_to_string(cfg.out.join("sweep/plot.tsv")).unwrap();
    assert_eq!(plot.lines().count(), 2 + cfg.model.encoder_layers);
    assert!(cfg.out.join("sweep/report.txt").exists());
}
