//! End-to-end acceptance run: eight checks, one PASS/FAIL line each.
//!
//! Criterion 6 trains the toy baseline and the per-layer mixup runs (about
//! ten minutes on one core); criterion 7 reads the same sweep.

use std::cell::RefCell;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use mixrep::augment::{sample_lambda, spec_augment, MixPlan, SpecAugmentConfig};
use mixrep::autodiff::{Activation, Graph, Var};
use mixrep::dataio::{ctc_min_frames, decode_features, encode_features, gen_synthetic, Batch, SynthConfig, Utterance};
use mixrep::gradcheck::{check, check_params, Tolerance};
use mixrep::harness::{
    cmd_gen_data, cmd_sweep_layers, load_dataset, select_set, train_on, ExperimentConfig, Mode, Precision,
    SweepReport,
};
use mixrep::losses::{ctc_loss, mixed_loss, sequence_loss, LossConfig, BLANK};
use mixrep::model::{decode_checkpoint, encode_checkpoint, Model, ModelConfig, Session};
use mixrep::rng::{Rng, StreamKind, Streams};
use mixrep::trainer::{lr_at, micro_batch, OptimConfig, Optimizer, RunLog};
use mixrep::{Real, Tensor};
use rand::{Rng as _, SeedableRng};
use statrs::distribution::{Beta, ChiSquared, ContinuousCDF};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> std::result::Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], r: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

// 1 ---------------------------------------------------------------------

fn beta_sampling() -> Check {
    let start = Instant::now();
    let mut r = Streams::new(1).stream(StreamKind::Mixup);
    let n = 100_000;
    let (mut sum, mut mid) = (0.0, 0usize);
    for _ in 0..n {
        let l = sample_lambda(2.0, &mut r).map_err(|e| e.to_string())?;
        sum += l;
        mid += usize::from((0.3..=0.7).contains(&l));
    }
    let (mean, mass) = (sum / n as f64, mid as f64 / n as f64);
    within(start.elapsed(), 1.0)?;
    ensure((0.49..=0.51).contains(&mean), || format!("mean {mean}"))?;
    ensure((0.558..=0.578).contains(&mass), || format!("mass in [0.3, 0.7] is {mass}"))?;
    Ok(format!("mean {mean:.4}, mass in [0.3, 0.7] {mass:.4}"))
}

// 2 ---------------------------------------------------------------------

fn brute_force_ctc(lp: &[f64], t: usize, v: usize, target: &[usize]) -> f64 {
    let mut total = 0.0;
    for code in 0..v.pow(t as u32) {
        let path: Vec<usize> = (0..t).map(|i| code / v.pow(i as u32) % v).collect();
        let mut collapsed = path.clone();
        collapsed.dedup();
        collapsed.retain(|&k| k != BLANK);
        if collapsed == target {
            total += path.iter().enumerate().map(|(i, &k)| lp[i * v + k]).sum::<f64>().exp();
        }
    }
    -total.ln()
}

fn ctc_oracle() -> Check {
    let start = Instant::now();
    let mut r = rng(2);
    let (mut checked, mut impossible, mut worst) = (0, 0, 0.0f64);
    for t in 1..=6 {
        for v in 2..=4 {
            for len in 0..=3 {
                for _ in 0..5 {
                    let target: Vec<usize> = (0..len).map(|_| r.random_range(1..v)).collect();
                    let x = random(&[1, t, v], &mut r).map(|x| 3.0 * x);
                    let mut g = Graph::new();
                    let xv = g.param(x);
                    let lp = g.log_softmax(xv).map_err(|e| e.to_string())?;
                    let res = ctc_loss(&mut g, lp, std::slice::from_ref(&target), &[t], BLANK);
                    if ctc_min_frames(&target) > t {
                        ensure(res.is_err(), || format!("{target:?} in {t} frames should be impossible"))?;
                        impossible += 1;
                        continue;
                    }
                    let loss = g.value(res.map_err(|e| e.to_string())?).item();
                    let oracle = brute_force_ctc(g.value(lp).data(), t, v, &target);
                    let err = (loss - oracle).abs();
                    worst = worst.max(err);
                    ensure(err <= 1e-9, || format!("T'={t} V={v} {target:?}: {loss} vs {oracle}"))?;
                    checked += 1;
                }
            }
        }
    }
    within(start.elapsed(), 30.0)?;
    ensure(checked >= 200, || format!("only {checked} instances"))?;
    Ok(format!(
        "{checked} instances, max |diff| {worst:.1e}; {impossible} unalignable draws rejected"
    ))
}

// 3 ---------------------------------------------------------------------

type Op = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> mixrep::Result<Var>>;

/// Weighted sum with fixed random weights, so every output element gets a
/// distinct upstream gradient.
fn probe(g: &mut Graph<f64>, y: Var) -> mixrep::Result<Var> {
    let w = random(g.shape(y), &mut rng(99));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Op)> {
    fn case(
        name: &'static str,
        shapes: &[&[usize]],
        f: impl Fn(&mut Graph<f64>, &[Var]) -> mixrep::Result<Var> + 'static,
    ) -> (&'static str, Vec<Vec<usize>>, Op) {
        (name, shapes.iter().map(|s| s.to_vec()).collect(), Box::new(f))
    }
    vec![
        case("add", &[&[2, 3, 4], &[2, 3, 4]], |g, v| {
            let y = g.add(v[0], v[1])?;
            probe(g, y)
        }),
        case("add (broadcast)", &[&[2, 3, 4], &[4]], |g, v| {
            let y = g.add(v[0], v[1])?;
            probe(g, y)
        }),
        case("sub (broadcast)", &[&[2, 3, 4], &[3, 1]], |g, v| {
            let y = g.sub(v[0], v[1])?;
            probe(g, y)
        }),
        case("mul (broadcast)", &[&[2, 3, 4], &[3, 4]], |g, v| {
            let y = g.mul(v[0], v[1])?;
            probe(g, y)
        }),
        case("scale", &[&[5]], |g, v| {
            let y = g.scale(v[0], -1.7);
            probe(g, y)
        }),
        case("matmul", &[&[2, 3, 4], &[4, 5]], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            probe(g, y)
        }),
        case("bmm", &[&[2, 3, 4], &[2, 4, 5]], |g, v| {
            let y = g.bmm(v[0], v[1], false)?;
            probe(g, y)
        }),
        case("bmm (transposed)", &[&[2, 3, 4], &[2, 5, 4]], |g, v| {
            let y = g.bmm(v[0], v[1], true)?;
            probe(g, y)
        }),
        case("reshape", &[&[2, 6]], |g, v| {
            let y = g.reshape(v[0], &[3, 4])?;
            probe(g, y)
        }),
        case("permute", &[&[2, 3, 4]], |g, v| {
            let y = g.permute(v[0], &[2, 0, 1])?;
            probe(g, y)
        }),
        case("index_select", &[&[4, 3]], |g, v| {
            let y = g.index_select(v[0], &[2, 0, 2, 3])?;
            probe(g, y)
        }),
        case("log_softmax", &[&[3, 5]], |g, v| {
            let y = g.log_softmax(v[0])?;
            probe(g, y)
        }),
        case("softmax", &[&[3, 5]], |g, v| {
            let y = g.softmax(v[0])?;
            probe(g, y)
        }),
        case("layer_norm", &[&[3, 6], &[6], &[6]], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            probe(g, y)
        }),
        case("conv2d", &[&[2, 2, 7, 6], &[3, 2, 3, 3], &[3]], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 2, 0)?;
            probe(g, y)
        }),
        case("conv2d (padded)", &[&[1, 2, 5, 5], &[2, 2, 3, 3], &[2]], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
            probe(g, y)
        }),
        case("depthwise_conv1d", &[&[2, 6, 3], &[3, 3], &[3]], |g, v| {
            let y = g.depthwise_conv1d(v[0], v[1], v[2], 1)?;
            probe(g, y)
        }),
        case("relu", &[&[12]], |g, v| {
            let y = g.activation(Activation::Relu, v[0]);
            probe(g, y)
        }),
        case("swish", &[&[12]], |g, v| {
            let y = g.activation(Activation::Swish, v[0]);
            probe(g, y)
        }),
        case("sigmoid", &[&[12]], |g, v| {
            let y = g.activation(Activation::Sigmoid, v[0]);
            probe(g, y)
        }),
        case("glu", &[&[3, 8]], |g, v| {
            let y = g.glu(v[0])?;
            probe(g, y)
        }),
        case("dropout", &[&[20]], |g, v| {
            let y = g.dropout(v[0], 0.3, true, &mut rng(5))?;
            probe(g, y)
        }),
        case("embedding", &[&[5, 3]], |g, v| {
            let y = g.embedding(v[0], &[4, 1, 1, 0, 2, 4], &[2, 3])?;
            probe(g, y)
        }),
        case("sum_all", &[&[3, 4]], |g, v| {
            let s = g.sum_all(v[0]);
            let w = g.constant(Tensor::scalar(0.37));
            g.mul(s, w)
        }),
        case("mean_all", &[&[3, 4]], |g, v| Ok(g.mean_all(v[0]))),
        case("ctc", &[&[2, 7, 4]], |g, v| {
            let lp = g.log_softmax(v[0])?;
            ctc_loss(g, lp, &[vec![1, 2, 2], vec![3]], &[7, 5], BLANK)
        }),
    ]
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 8,
        model_dim: 8,
        encoder_layers: 2,
        decoder_layers: 1,
        heads: 2,
        ffn_dim: 16,
        conv_kernel: 3,
        dropout: 0.1,
        vocab_size: 6,
        subsample_channels: 4,
        max_target_len: 12,
    }
}

fn random_batch(r: &mut Rng, f: usize, spec: &[(usize, Vec<usize>)]) -> Batch {
    let utts: Vec<Utterance> = spec
        .iter()
        .enumerate()
        .map(|(i, (t, y))| Utterance {
            id: format!("u{i}"),
            features: Tensor::new(&[*t, f], (0..t * f).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap(),
            tokens: y.clone(),
        })
        .collect();
    Batch::collate(&utts.iter().collect::<Vec<_>>()).unwrap()
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let (mut worst, mut worst_abs) = (0.0f64, 0.0f64);
    let mut elements = 0;
    let cases = op_cases();
    let mut r = rng(3);
    for (name, shapes, f) in &cases {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut r)).collect();
        let rep = check(&inputs, f, Tolerance::default()).map_err(|e| format!("{name}: {e}"))?;
        ensure(rep.passed(), || format!("{name}: {:?}", rep.failures.first()))?;
        worst = worst.max(rep.max_rel_err);
        worst_abs = worst_abs.max(rep.max_abs_err);
        elements += rep.checked;
    }

    let cfg = tiny_model_config();
    let model: Model<f64> = Model::new(&cfg, &mut rng(4)).map_err(|e| e.to_string())?;
    let batch = random_batch(&mut r, 8, &[(20, vec![1, 2]), (15, vec![3]), (18, vec![4, 4])]);
    let n = model.params().len();
    let picks: Vec<(usize, usize)> = (0..24)
        .map(|_| {
            let i = r.random_range(0..n);
            (i, r.random_range(0..model.params().values()[i].len()))
        })
        .collect();
    let (mut e2e, mut e2e_abs) = (0.0f64, 0.0f64);
    for plan in [MixPlan::off(3), MixPlan::fixed(1, 0.3, vec![2, 0, 1])] {
        let rep = check_params(
            &model,
            &picks,
            |s| {
                let trace = s.encode(&batch, &plan, &SpecAugmentConfig::off(), &mut rng(0))?;
                Ok(mixed_loss(s, &trace, &batch.labels, &LossConfig::default())?.0)
            },
            Tolerance {
                rel: 1e-3,
                ..Tolerance::default()
            },
        )
        .map_err(|e| e.to_string())?;
        ensure(rep.passed(), || format!("end to end: {:?}", rep.failures.first()))?;
        e2e = e2e.max(rep.max_rel_err);
        e2e_abs = e2e_abs.max(rep.max_abs_err);
    }
    within(start.elapsed(), 120.0)?;
    Ok(format!(
        "{} ops / {elements} elements, max rel err {worst:.1e} (max abs diff {worst_abs:.1e}); \
         2-layer model on {} parameters (plain and mixed), max rel err {e2e:.1e} (max abs diff {e2e_abs:.1e})",
        cases.len(),
        picks.len()
    ))
}

// 4 ---------------------------------------------------------------------

fn toy_batch(n: usize) -> Batch {
    let data = gen_synthetic(&SynthConfig {
        num_utterances: n,
        ..SynthConfig::default()
    })
    .unwrap();
    Batch::collate(&data.iter().collect::<Vec<_>>()).unwrap()
}

fn param_bits<T: Real>(m: &Model<T>) -> Vec<u64> {
    m.params().values().iter().flat_map(|t| t.data().iter().map(|x| x.f64().to_bits())).collect()
}

fn mixup_algebra() -> Check {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let streams = Streams::new(7);
    let model: Model<f64> = Model::new(&cfg, &mut streams.stream(StreamKind::Init)).map_err(|e| e.to_string())?;
    let batch = toy_batch(4);
    let spec = SpecAugmentConfig::default();
    let loss_cfg = LossConfig::default();
    let pass = |plan: &MixPlan| {
        micro_batch(
            &model,
            &batch,
            plan,
            &spec,
            streams.stream(StreamKind::Dropout),
            &mut streams.stream(StreamKind::Augment),
            &loss_cfg,
            1.0,
        )
        .unwrap()
    };
    let step = |plan: &MixPlan| {
        let mut m = model.clone();
        let mut opt = Optimizer::new(&m, OptimConfig {
            accum_steps: 1,
            ..OptimConfig::default()
        })
        .unwrap();
        opt.accumulate(pass(plan).grads).unwrap();
        opt.apply(&mut m);
        param_bits(&m)
    };

    let perm = vec![3, 2, 0, 1];
    let base = step(&MixPlan::off(4));
    ensure(base != param_bits(&model), || "the update changed nothing".into())?;
    for k in 0..=cfg.encoder_layers {
        ensure(step(&MixPlan::fixed(k, 1.0, perm.clone())) == base, || {
            format!("lambda = 1 at layer {k} changed the update")
        })?;
    }

    let plain = pass(&MixPlan::off(4));
    for k in 0..=cfg.encoder_layers {
        let half = pass(&MixPlan::fixed(k, 0.5, vec![0, 1, 2, 3]));
        ensure(half.loss.to_bits() == plain.loss.to_bits(), || {
            format!("self-mix at layer {k}: loss {} vs {}", half.loss, plain.loss)
        })?;
        for (a, b) in half.grads.iter().zip(&plain.grads) {
            let (Some(a), Some(b)) = (a, b) else {
                return Err("missing gradient".into());
            };
            ensure(a.max_abs_diff(b) <= 1e-12, || format!("self-mix at layer {k}: gradients differ"))?;
        }
    }

    let mut cases = 0;
    for k in 0..=cfg.encoder_layers {
        for lam in [0.1, 0.37, 0.5, 0.81] {
            let mut s = Session::eval(&model);
            let plan = MixPlan::fixed(k, lam, perm.clone());
            let trace = s.encode(&batch, &plan, &SpecAugmentConfig::off(), &mut rng(0)).map_err(|e| e.to_string())?;
            let (total, _) = mixed_loss(&mut s, &trace, &batch.labels, &loss_cfg).map_err(|e| e.to_string())?;
            let total = s.graph.value(total).item();
            let lp = s.ctc_log_probs(trace.encoder_output).map_err(|e| e.to_string())?;
            let partner: Vec<Vec<usize>> = perm.iter().map(|&j| batch.labels[j].clone()).collect();
            let (own, ..) = sequence_loss(&mut s, &trace, lp, &batch.labels, &loss_cfg).map_err(|e| e.to_string())?;
            let (other, ..) = sequence_loss(&mut s, &trace, lp, &partner, &loss_cfg).map_err(|e| e.to_string())?;
            let expect = lam * s.graph.value(own).item() + (1.0 - lam) * s.graph.value(other).item();
            ensure(total.to_bits() == expect.to_bits(), || {
                format!("layer {k}, lambda {lam}: {total} vs {expect}")
            })?;
            cases += 1;
        }
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "unit-lambda updates bitwise equal at all {} layers; self-mix equal; linearity exact in {cases} cases",
        cfg.encoder_layers + 1
    ))
}

// 5 ---------------------------------------------------------------------

fn specaugment_properties() -> Check {
    let start = Instant::now();
    let mut r = rng(5);
    let trials = 300;
    for trial in 0..trials {
        let (t, f) = (r.random_range(1..80), r.random_range(1..20));
        let x = random(&[t, f], &mut r);
        let len = r.random_range(0..=t);

        let mut y = x.clone();
        spec_augment(&mut y, len, &SpecAugmentConfig::off(), &mut r);
        ensure(y == x, || format!("trial {trial}: masks-off config changed the input"))?;

        let cfg = SpecAugmentConfig {
            time_warp: 0,
            freq_masks: r.random_range(0..3),
            freq_width: r.random_range(0..6),
            time_masks: r.random_range(0..3),
            time_width: r.random_range(0..12),
            time_enabled: true,
            freq_enabled: true,
        };
        let mut y = x.clone();
        let out = spec_augment(&mut y, len, &cfg, &mut r);
        let in_mask = |ti: usize, d: usize| {
            ti < len
                && (out.time_masks.iter().any(|&(s, w)| (s..s + w).contains(&ti))
                    || out.freq_masks.iter().any(|&(s, w)| (s..s + w).contains(&d)))
        };
        let mut masked = 0;
        for ti in 0..t {
            for d in 0..f {
                let (a, b) = (x.row(ti)[d], y.row(ti)[d]);
                if in_mask(ti, d) {
                    ensure(b == 0.0, || format!("trial {trial}: masked cell ({ti}, {d}) is {b}"))?;
                    masked += 1;
                } else {
                    ensure(a.to_bits() == b.to_bits(), || format!("trial {trial}: cell ({ti}, {d}) changed"))?;
                }
            }
        }
        let bound = cfg.time_masks * cfg.time_width * f + cfg.freq_masks * cfg.freq_width * len;
        ensure(masked <= bound && masked <= out.masked_cell_bound(f, len), || {
            format!("trial {trial}: {masked} masked cells, bound {bound}")
        })?;

        let warp = SpecAugmentConfig {
            time_warp: r.random_range(1..6),
            time_masks: 0,
            ..cfg.clone()
        };
        let mut padded = x.clone();
        let c = r.random_range(-2.0..2.0);
        for ti in 0..len {
            padded.data_mut()[ti * f..(ti + 1) * f].fill(c);
        }
        let before = padded.clone();
        let freq_off = SpecAugmentConfig {
            freq_enabled: false,
            ..warp
        };
        spec_augment(&mut padded, len, &freq_off, &mut r);
        ensure(padded.shape() == before.shape(), || "time warp changed the shape".into())?;
        for ti in 0..t {
            for d in 0..f {
                let (a, b) = (before.row(ti)[d], padded.row(ti)[d]);
                let ok = if ti < len { (b - c).abs() <= 1e-6 } else { a.to_bits() == b.to_bits() };
                ensure(ok, || format!("trial {trial}: warp moved ({ti}, {d}) from {a} to {b}"))?;
            }
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("{trials} random matrices"))
}

// 6 and 7 ---------------------------------------------------------------

struct SweepRun {
    report: SweepReport,
    durations: Vec<(String, Duration)>,
    cfg: ExperimentConfig,
}

fn run_sweep(dir: &Path) -> std::result::Result<SweepRun, String> {
    let mut cfg = ExperimentConfig::default();
    cfg.out = dir.to_path_buf();
    cfg.mode = Mode::MixrepTimeEnhanced;
    cfg.mixup.alpha = 2.0;
    cfg.mixup.tau = 0.45;
    cfg.mixup.layers = vec![0];
    cmd_gen_data(&cfg).map_err(|e| e.to_string())?;

    let marks = RefCell::new(Vec::<(String, Instant)>::new());
    let report = cmd_sweep_layers(&cfg, &mut |line| {
        if let Some(name) = line.strip_prefix("== ") {
            marks.borrow_mut().push((name.to_string(), Instant::now()));
        }
    })
    .map_err(|e| e.to_string())?;
    let end = Instant::now();
    let marks = marks.into_inner();
    let durations = marks
        .iter()
        .enumerate()
        .map(|(i, (name, t))| {
            let next = marks.get(i + 1).map_or(end, |m| m.1);
            (name.clone(), next - *t)
        })
        .collect();
    Ok(SweepRun { report, durations, cfg })
}

fn read_log(dir: &Path) -> std::result::Result<RunLog, String> {
    fs::read_to_string(dir.join("runlog.txt"))
        .map_err(|e| e.to_string())?
        .parse()
        .map_err(|e: mixrep::Error| e.to_string())
}

/// Pearson χ² of the logged λ histogram (ten equal-width bins) against
/// Beta(α, α); returns the p-value.
fn lambda_fit(hist: &[usize], alpha: f64) -> f64 {
    let beta = Beta::new(alpha, alpha).unwrap();
    let n: usize = hist.iter().sum();
    let bins = hist.len();
    let stat: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            let p = beta.cdf((i + 1) as f64 / bins as f64) - beta.cdf(i as f64 / bins as f64);
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

fn end_to_end(sweep: &std::result::Result<SweepRun, String>) -> Check {
    let run = sweep.as_ref().map_err(|e| format!("sweep failed: {e}"))?;
    let row_dir = |i: usize| run.report.rows[i].dir.clone().unwrap();
    let budget = Duration::from_secs(30 * 60);
    let mut lines = vec![format!(
        "    {:<10} {:>8} {:>8} {:>8} {:>9} {:>8} {:>7}",
        "run", "ter_att", "best", "ter_ctc", "mixed", "chi2 p", "time"
    )];
    let mut failures = Vec::new();
    for (label, index) in [("baseline", 0), ("S={0}", 1), ("S={2}", 3)] {
        let row = &run.report.rows[index];
        if let Some(e) = &row.error {
            failures.push(format!("{label} did not finish: {e}"));
            continue;
        }
        let log = read_log(&row_dir(index))?;
        let last = log.last_eval().ok_or("no evaluation")?;
        let best = log.best_eval().ok_or("no evaluation")?;
        let time = run.durations[index].1;
        if time > budget {
            failures.push(format!("{label} took {:.0}s", time.as_secs_f64()));
        }
        let frac = log.stats.mixed_fraction();
        let p = if index == 0 { None } else { Some(lambda_fit(&log.stats.lambda_hist, run.cfg.mixup.alpha)) };
        if index == 0 {
            if last.ter_att >= 15.0 {
                failures.push(format!("baseline token error {:.2}% is not below 15%", last.ter_att));
            }
            if log.stats.mixed != 0 {
                failures.push("baseline mixed some batches".into());
            }
        } else {
            if (frac - run.cfg.mixup.tau).abs() > 0.05 || log.stats.batches < 500 {
                failures.push(format!("{label}: mixed fraction {frac:.3} over {} batches", log.stats.batches));
            }
            if p.unwrap() <= 0.01 {
                failures.push(format!("{label}: lambda histogram chi2 p = {:.4}", p.unwrap()));
            }
        }
        lines.push(format!(
            "    {:<10} {:>8.2} {:>8.2} {:>8.2} {:>9} {:>8} {:>6.0}s",
            label,
            last.ter_att,
            best.ter_att,
            last.ter_ctc,
            format!("{}/{}", log.stats.mixed, log.stats.batches),
            p.map_or("-".into(), |p| format!("{p:.3}")),
            time.as_secs_f64()
        ));
    }
    println!("{}", lines.join("\n"));
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    let base = run.report.rows[0].ter.unwrap();
    Ok(format!(
        "baseline final attention token error {base:.2}% < 15%; mixup runs match tau and Beta(2,2)"
    ))
}

fn layer_sweep(sweep: &std::result::Result<SweepRun, String>) -> Check {
    let run = sweep.as_ref().map_err(|e| format!("sweep failed: {e}"))?;
    let k = run.cfg.model.encoder_layers;
    print!("{}", indent(&run.report.to_string()));
    let rows = &run.report.rows;
    ensure(rows.len() == k + 2, || format!("{} rows for K = {k}", rows.len()))?;
    ensure(rows[0].layer.is_none(), || "first row is not the baseline".into())?;
    ensure(rows[1..].iter().map(|r| r.layer).eq((0..=k).map(Some)), || "layer rows out of order".into())?;
    let base = read_log(rows[0].dir.as_ref().unwrap())?.last_eval().unwrap().ter_att;
    for r in &rows[1..] {
        if r.error.is_some() {
            continue;
        }
        let own = read_log(r.dir.as_ref().unwrap())?.last_eval().unwrap().ter_att;
        ensure((r.delta.unwrap() - (base - own)).abs() < 1e-6, || format!("{}: delta mismatch", r.label()))?;
    }
    let plot = fs::read_to_string(run.cfg.out.join("sweep/plot.tsv")).map_err(|e| e.to_string())?;
    ensure(plot.lines().count() == k + 2, || "plot file rows".into())?;
    ensure(run.report.selected == select_set(&run.report).unwrap_or_default(), || "selected set".into())?;

    let mocked = |best: usize, layers: usize| {
        let ters = (0..=layers).map(|i| Ok(if i == best { 10.0 } else { 12.0 + i as f64 * 0.01 })).collect();
        select_set(&SweepReport::from_results(Ok(13.0), ters)).unwrap()
    };
    ensure(mocked(5, 12) == vec![0, 5], || "best=5 should select {0,5}".into())?;
    ensure(mocked(9, 12) == vec![0, 9], || "best=9 should select {0,9}".into())?;
    ensure(mocked(0, 12) == vec![0], || "best=0 should select {0}".into())?;
    Ok(format!(
        "{} rows, deltas match the run logs, selected {:?}; mocked best=5 -> {{0,5}}, best=9 -> {{0,9}}, best=0 -> {{0}}",
        rows.len(),
        run.report.selected
    ))
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("    {l}\n")).collect()
}

// 8 ---------------------------------------------------------------------

fn determinism_and_formats(dir: &Path) -> Check {
    let mut cfg = ExperimentConfig::parse(
        "data.vocab_size = 6
data.feature_dim = 8
data.train_utterances = 16
data.eval_utterances = 4
model.dim = 16
model.encoder_layers = 2
model.decoder_layers = 1
model.ffn_dim = 32
model.conv_kernel = 3
model.subsample_channels = 4
train.epochs = 2
train.warmup_steps = 10
train.max_elements = 1024
mode = mixrep-time-enhanced
mixup.layers = 0,1,2
mixup.tau = 0.6
",
    )
    .map_err(|e| e.to_string())?
    .with_overrides(Some(3), Some(dir.join("det")), true);
    ensure(cfg.precision == Precision::F64, || "deterministic flag".into())?;
    cmd_gen_data(&cfg).map_err(|e| e.to_string())?;
    let data = load_dataset(&cfg).map_err(|e| e.to_string())?;
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        cfg.out = dir.join(name);
        train_on(&cfg, &data, &mut |_| {}).map_err(|e| e.to_string())?;
        texts.push(fs::read(cfg.out.join("runlog.txt")).map_err(|e| e.to_string())?);
    }
    ensure(texts[0] == texts[1], || "run logs differ".into())?;

    let mut r = rng(8);
    let mut specials = vec![0.0f32, -0.0, f32::MIN_POSITIVE / 8.0, f32::MAX, f32::MIN, 1.0e-30];
    specials.extend((0..194).map(|_| r.random_range(-1e3f32..1e3)));
    let feats = Tensor::new(&[20, 10], specials).unwrap();
    let back = decode_features(&encode_features(&feats).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(
        back.shape() == feats.shape() && back.data().iter().zip(feats.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
        || "feature round trip".into(),
    )?;

    let m32: Model<f32> = Model::new(&ModelConfig::default(), &mut rng(9)).map_err(|e| e.to_string())?;
    let m64: Model<f64> = Model::new(&tiny_model_config(), &mut rng(10)).map_err(|e| e.to_string())?;
    let bytes32 = encode_checkpoint(&m32).map_err(|e| e.to_string())?;
    let back32: Model<f32> = decode_checkpoint(&bytes32).map_err(|e| e.to_string())?;
    let bytes64 = encode_checkpoint(&m64).map_err(|e| e.to_string())?;
    let back64: Model<f64> = decode_checkpoint(&bytes64).map_err(|e| e.to_string())?;
    ensure(param_bits(&back32) == param_bits(&m32) && back32.config() == m32.config(), || "f32 checkpoint".into())?;
    ensure(param_bits(&back64) == param_bits(&m64) && back64.config() == m64.config(), || "f64 checkpoint".into())?;
    ensure(encode_checkpoint(&back32).unwrap() == bytes32, || "checkpoint re-encode".into())?;

    let anchors = [(30_000, 0.005), (15_000, 0.0025), (120_000, 0.0025)];
    for (step, want) in anchors {
        let got = lr_at(step, 0.005, 30_000);
        ensure(got == want, || format!("lr_at({step}) = {got}, want {want}"))?;
    }
    Ok(format!(
        "two f64 runs give identical logs ({} bytes); feature and checkpoint round trips bit-exact; lr anchors exact",
        texts[0].len()
    ))
}

// ------------------------------------------------------------------------

fn report(n: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} criterion {n} ({name}, {secs:.1}s): {detail}");
    outcome.is_ok()
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut ok = true;
    ok &= report(1, "beta sampling", beta_sampling);
    ok &= report(2, "ctc oracle", ctc_oracle);
    ok &= report(3, "gradient suite", gradient_suite);
    ok &= report(4, "mixup algebra", mixup_algebra);
    ok &= report(5, "specaugment properties", specaugment_properties);
    let sweep_start = Instant::now();
    let sweep = run_sweep(&tmp.path().join("toy"));
    println!("    toy sweep finished in {:.0}s", sweep_start.elapsed().as_secs_f64());
    ok &= report(6, "end-to-end toy run", || end_to_end(&sweep));
    ok &= report(7, "layer sweep", || layer_sweep(&sweep));
    ok &= report(8, "determinism and formats", || determinism_and_formats(tmp.path()));
    if !ok {
        std::process::exit(1);
    }
}
