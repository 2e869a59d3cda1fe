//! Per-layer mixup sweep and layer-set selection.

use std::fmt::{self, Write as _};
use std::path::PathBuf;

use super::{create_dir, load_dataset, train_on, write_text, ExperimentConfig, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// `None` for the baseline.
    pub layer: Option<usize>,
    /// Final attention-decoder token error (%), if the run finished.
    pub ter: Option<f64>,
    /// Baseline error minus this run's error; positive means mixup helped.
    pub delta: Option<f64>,
    /// Why the run did not finish.
    pub error: Option<String>,
    pub dir: Option<PathBuf>,
}

impl SweepRow {
    pub fn label(&self) -> String {
        self.layer.map_or_else(|| "baseline".into(), |k| format!("k={k}"))
    }
}

/// Baseline row first, then one row per layer `0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub selected: Vec<usize>,
}

fn row(layer: Option<usize>, outcome: std::result::Result<f64, String>, baseline: Option<f64>) -> SweepRow {
    let (ter, error) = match outcome {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e)),
    };
    SweepRow {
        layer,
        ter,
        delta: layer.and(baseline.zip(ter).map(|(b, t)| b - t)),
        error,
        dir: None,
    }
}

impl SweepReport {
    /// Build a report from run outcomes; `layers[k]` is the run with mixup
    /// at layer `k`.
    pub fn from_results(
        baseline: std::result::Result<f64, String>,
        layers: Vec<std::result::Result<f64, String>>,
    ) -> Self {
        let base = baseline.as_ref().ok().copied();
        let mut rows = vec![row(None, baseline, None)];
        rows.extend(layers.into_iter().enumerate().map(|(k, r)| row(Some(k), r, base)));
        let mut report = Self {
            rows,
            selected: Vec::new(),
        };
        report.selected = select_set(&report).unwrap_or_default();
        report
    }

    pub fn baseline(&self) -> &SweepRow {
        &self.rows[0]
    }

    pub fn layer(&self, k: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.layer == Some(k))
    }

    /// `k<TAB>delta` lines, `nan` for runs without a result.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("k\tdelta\n");
        for r in &self.rows[1..] {
            let _ = writeln!(out, "{}\t{}", r.layer.unwrap(), r.delta.unwrap_or(f64::NAN));
        }
        out
    }
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>9} {:>9}  status", "run", "ter_att", "delta")?;
        for r in &self.rows {
            let num = |v: Option<f64>, sign: bool| match v {
                Some(v) if sign => format!("{v:+.2}"),
                Some(v) => format!("{v:.2}"),
                None => "-".into(),
            };
            writeln!(
                f,
                "{:<10} {:>9} {:>9}  {}",
                r.label(),
                num(r.ter, false),
                num(r.delta, true),
                r.error.as_deref().unwrap_or("ok")
            )?;
        }
        let set: Vec<String> = self.selected.iter().map(usize::to_string).collect();
        writeln!(f, "selected S = {{{}}}", set.join(","))
    }
}

/// The input layer plus the best single hidden layer, or the input layer
/// alone when it beats every hidden layer. Ties go to the smaller index.
pub fn select_set(report: &SweepReport) -> Result<Vec<usize>> {
    let scored = |r: &SweepRow| Some((r.layer?, r.ter?));
    let input = report.layer(0).and_then(scored).map(|(_, t)| t);
    let hidden = report
        .rows
        .iter()
        .filter_map(scored)
        .filter(|&(k, _)| k >= 1)
        .fold(None, |best: Option<(usize, f64)>, (k, t)| match best {
            Some((bk, bt)) if bt < t || (bt == t && bk < k) => Some((bk, bt)),
            _ => Some((k, t)),
        });
    match (input, hidden) {
        (None, None) => Err(Error::UndefinedMetric("no sweep run finished".into())),
        (Some(_), None) => Ok(vec![0]),
        (Some(t0), Some((_, t))) if t0 <= t => Ok(vec![0]),
        (_, Some((k, _))) => Ok(vec![0, k]),
    }
}

/// Train the baseline, then one run per layer `k ∈ 0..=K` with mixup at
/// `k` only. Runs share the master seed, so they see the same
/// initialization and batch order. A failed run is recorded and the sweep
/// moves on.
pub fn cmd_sweep_layers(cfg: &ExperimentConfig, report: &mut dyn FnMut(&str)) -> Result<SweepReport> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let root = cfg.out.join("sweep");
    create_dir(&root)?;
    let mode = if cfg.mode.mixes() { cfg.mode } else { Mode::MixrepTimeEnhanced };

    let mut runs = vec![(None, ExperimentConfig {
        mode: Mode::Baseline,
        mixup: crate::augment::MixupConfig {
            layers: Vec::new(),
            ..cfg.mixup.clone()
        },
        ..cfg.clone()
    })];
    for k in 0..=cfg.model.encoder_layers {
        let mut c = cfg.clone();
        c.mode = mode;
        c.mixup.layers = vec![k];
        runs.push((Some(k), c));
    }

    let mut outcomes = Vec::new();
    let mut dirs = Vec::new();
    for (layer, mut c) in runs {
        let name = layer.map_or_else(|| "baseline".to_string(), |k| format!("k{k}"));
        c.data_dir = Some(cfg.data_dir());
        c.out = root.join(&name);
        report(&format!("== {name}"));
        let outcome = train_on(&c, &data, report).and_then(|s| {
            s.log
                .last_eval()
                .map(|e| e.ter_att)
                .ok_or_else(|| Error::UndefinedMetric("run has no evaluation".into()))
        });
        if let Err(e) = &outcome {
            report(&format!("{name} failed: {e}"));
        }
        outcomes.push(outcome.map_err(|e| e.to_string()));
        dirs.push(c.out);
    }

    let baseline = outcomes.remove(0);
    let mut sweep = SweepReport::from_results(baseline, outcomes);
    for (r, d) in sweep.rows.iter_mut().zip(dirs) {
        r.dir = Some(d);
    }
    write_text(&root.join("report.txt"), &sweep.to_string())?;
    write_text(&root.join("plot.tsv"), &sweep.plot_data())?;
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mocked(baseline: f64, ters: &[f64]) -> SweepReport {
        SweepReport::from_results(Ok(baseline), ters.iter().map(|&t| Ok(t)).collect())
    }

    #[test]
    fn best_hidden_layer_joins_the_input_layer() {
        let mut ters = vec![20.0; 10];
        ters[5] = 15.0;
        assert_eq!(select_set(&mocked(21.0, &ters)).unwrap(), vec![0, 5]);
        let mut ters = vec![12.0; 13];
        ters[9] = 10.5;
        assert_eq!(select_set(&mocked(21.0, &ters)).unwrap(), vec![0, 9]);
    }

    #[test]
    fn input_layer_alone_when_best() {
        assert_eq!(select_set(&mocked(9.0, &[5.0, 6.0, 7.0])).unwrap(), vec![0]);
        assert_eq!(select_set(&mocked(9.0, &[6.0, 6.0, 7.0])).unwrap(), vec![0]);
    }

    #[test]
    fn ties_go_to_the_smaller_layer() {
        assert_eq!(select_set(&mocked(9.0, &[8.0, 7.0, 6.0, 6.0, 6.0])).unwrap(), vec![0, 2]);
    }

    #[test]
    fn failed_runs_are_skipped() {
        let r = SweepReport::from_results(
            Ok(10.0),
            vec![Err("diverged".into()), Ok(9.0), Err("diverged".into())],
        );
        assert_eq!(r.selected, vec![0, 1]);
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[2].delta, Some(1.0));
        assert_eq!(r.rows[1].delta, None);
        let none = SweepReport::from_results(Err("x".into()), vec![Err("y".into())]);
        assert!(matches!(select_set(&none), Err(Error::UndefinedMetric(_))));
        assert!(none.selected.is_empty());
    }

    #[test]
    fn deltas_and_table() {
        let r = mocked(10.0, &[9.5, 11.0]);
        assert_eq!(r.rows.iter().map(|r| r.delta).collect::<Vec<_>>(), [None, Some(0.5), Some(-1.0)]);
        assert_eq!(r.plot_data(), "k\tdelta\n0\t0.5\n1\t-1\n");
        let table = r.to_string();
        assert!(table.contains("baseline") && table.contains("+0.50") && table.contains("selected S = {0}"));
    }
}
