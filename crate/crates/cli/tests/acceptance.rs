//! End-to-end acceptance battery. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any required criterion fails.

use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde_json::Value;
use slicegru::data::{
    balanced_batches, load_manifest, load_voxels, make_fold_plan, Label, Laterality,
    PreprocessConfig, Subset, VolumeRecord,
};
use slicegru::eval::{auc, basic_metrics, confusion, mcc, ConfusionCounts, DECISION_THRESHOLD};
use slicegru::explain::rollout_product;
use slicegru::features::{build_extractor, extract_dataset, ExtractorSpec};
use slicegru::model::{
    dropout_mask, head_backward, head_forward, DropoutMode, GruDirectionParams, HeadParams,
    HeadShape,
};
use slicegru::rng::rng_from;
use slicegru::train::{focal_loss, FocalConfig};

const BIN: &str = env!("CARGO_BIN_EXE_slicegru");
const PRESET: &str = include_str!("../../../configs/synthetic.json");

/// Outcome of one criterion: `Ok(detail)` passes, `Err(detail)` fails.
type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------- 1: gradient oracle ----------

const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-5;
/// Central differences at this step carry about 1e-11 of rounding noise, so
/// gradients smaller than this are compared on an absolute scale.
const GRAD_FLOOR: f64 = 1e-5;

fn gradient_oracle() -> Check {
    let start = Instant::now();
    let shape = HeadShape {
        input_dim: 8,
        hidden1: 6,
        hidden2: 4,
    };
    let focal = FocalConfig::default();
    let d = 5;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let params = HeadParams::<GruDirectionParams>::init(shape, 0.3, 100 + seed).unwrap();
        let mut rng = rng_from(seed, 0xACCE);
        let x = Array2::from_shape_simple_fn((d, 8), || rng.random_range(-1.0..1.0));
        let mask = dropout_mask(d, 2 * shape.hidden2, 0.3, seed);
        let mode = DropoutMode::Mask(mask);
        let y = if seed.is_multiple_of(2) { Label::Glaucoma } else { Label::Normal };
        let loss = |p: &HeadParams<GruDirectionParams>, x: ArrayView2<f64>| {
            focal_loss(head_forward(x, p, &mode).unwrap().0, y, &focal).0
        };

        let (p, trace) = head_forward(x.view(), &params, &mode).unwrap();
        let grads = head_backward(&trace, focal_loss(p, y, &focal).1, &params).unwrap();
        let analytic = grads.params.flatten();
        let base = params.flatten();
        for i in 0..base.len() {
            let mut shifted = params.clone();
            let mut v = base.clone();
            v[i] = base[i] + GRAD_EPS;
            shifted.assign_flat(&v).unwrap();
            let up = loss(&shifted, x.view());
            v[i] = base[i] - GRAD_EPS;
            shifted.assign_flat(&v).unwrap();
            let down = loss(&shifted, x.view());
            let numeric = (up - down) / (2.0 * GRAD_EPS);
            let err = (analytic[i] - numeric).abs()
                / analytic[i].abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(err);
            ensure(err <= GRAD_TOL, || {
                format!("instance {seed} parameter {i}: analytic {} numeric {numeric}", analytic[i])
            })?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!("20 instances, worst relative error {worst:.2e}, {elapsed:.1?}"))
}

// ---------- 2: focal loss reduces to weighted cross-entropy ----------

fn focal_reduction() -> Check {
    let mut worst = 0.0f64;
    for alpha in [0.1, 0.3, 0.5] {
        let cfg = FocalConfig { alpha, gamma: 0.0 };
        for k in 1..=99 {
            let p = k as f64 / 100.0;
            for (y, want) in [
                (Label::Glaucoma, -alpha * p.ln()),
                (Label::Normal, -(1.0 - alpha) * (1.0 - p).ln()),
            ] {
                let err = (focal_loss(p, y, &cfg).0 - want).abs();
                worst = worst.max(err);
                ensure(err <= 1e-12, || format!("alpha {alpha} p {p} {y:?}: error {err:e}"))?;
            }
        }
    }
    Ok(format!("3 x 99 x 2 grid points, worst error {worst:.1e}"))
}

// ---------- 3: metric oracles ----------

fn labels_from(bits: &[bool]) -> Vec<Label> {
    bits.iter()
        .map(|&b| if b { Label::Glaucoma } else { Label::Normal })
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn metric_oracles() -> Check {
    let mut rng = rng_from(3, 0xACCE);
    for case in 0..1000 {
        let n = rng.random_range(1..60);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let labels = labels_from(&bits);
        let mut want = ConfusionCounts::default();
        for (&s, &b) in scores.iter().zip(&bits) {
            match (b, s >= 0.5) {
                (true, true) => want.tp += 1,
                (true, false) => want.fn_ += 1,
                (false, true) => want.fp += 1,
                (false, false) => want.tn += 1,
            }
        }
        let got = confusion(&scores, &labels, DECISION_THRESHOLD).unwrap();
        ensure(got == want, || format!("case {case}: counts {got:?} vs {want:?}"))?;

        let (tp, tn, fp, fn_) = (want.tp as f64, want.tn as f64, want.fp as f64, want.fn_ as f64);
        let m = basic_metrics(&got);
        ensure(close(m.acc, (tp + tn) / n as f64), || format!("case {case}: acc"))?;
        if tp + fn_ > 0.0 {
            ensure(close(m.sen, tp / (tp + fn_)), || format!("case {case}: sen"))?;
        }
        if tn + fp > 0.0 {
            ensure(close(m.spe, tn / (tn + fp)), || format!("case {case}: spe"))?;
        }
        if tp + fp > 0.0 {
            ensure(close(m.prc, tp / (tp + fp)), || format!("case {case}: prc"))?;
        }
        if tp > 0.0 {
            ensure(close(m.f1, 2.0 * tp / (2.0 * tp + fp + fn_)), || format!("case {case}: f1"))?;
        }
        let margins = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if margins > 0.0 {
            let want_mcc = (tp * tn - fp * fn_) / margins.sqrt();
            ensure(close(mcc(&got).0, want_mcc), || format!("case {case}: mcc"))?;
        } else {
            ensure(mcc(&got).1, || format!("case {case}: degenerate mcc not flagged"))?;
        }
    }

    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.random_range(2..80);
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64 / 11.0).collect();
        let mut bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        bits[0] = true;
        bits[1] = false;
        let (mut num, mut pairs) = (0.0, 0.0);
        for i in (0..n).filter(|&i| bits[i]) {
            for j in (0..n).filter(|&j| !bits[j]) {
                pairs += 1.0;
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        let err = (auc(&scores, &labels_from(&bits)).unwrap() - num / pairs).abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("auc case {case}: error {err:e}"))?;
    }

    // 847 positives (798 detected) and 263 negatives (192 rejected)
    let published = ConfusionCounts {
        tp: 798,
        fn_: 49,
        tn: 192,
        fp: 71,
    };
    let (value, undefined) = mcc(&published);
    ensure(!undefined && (value - 0.693).abs() <= 0.001, || format!("mcc {value}"))?;
    Ok(format!("1000 count/metric cases, 200 auc cases (worst {worst:.1e}), mcc {value:.4}"))
}

// ---------- 4: split safety ----------

fn record(volume: String, subject: String, label: Label) -> VolumeRecord {
    VolumeRecord {
        relative_path: format!("{volume}.raw").into(),
        volume_id: volume,
        subject_id: subject,
        label,
        laterality: Laterality::Unknown,
        signal_strength: None,
        shape: (1, 1, 1),
        voxels: None,
    }
}

fn split_safety() -> Check {
    let mut rng = rng_from(4, 0xACCE);
    let mut batches_checked = 0;
    for plan_seed in 0..100u64 {
        let k = rng.random_range(2..=5);
        let n_subjects = rng.random_range(4 * k..60);
        let mut records = Vec::new();
        for s in 0..n_subjects {
            let label = if s % 3 == 0 { Label::Normal } else { Label::Glaucoma };
            for v in 0..rng.random_range(1..=3) {
                records.push(record(format!("s{s}-v{v}"), format!("s{s}"), label));
            }
        }
        // shuffle record order so subjects are interleaved
        for i in (1..records.len()).rev() {
            records.swap(i, rng.random_range(0..=i));
        }
        let subjects: HashSet<&str> = records.iter().map(|r| r.subject_id.as_str()).collect();
        let plan = make_fold_plan(&records, k, plan_seed).map_err(|e| e.to_string())?;
        let mut tested = HashSet::new();
        for (f, fold) in plan.folds.iter().enumerate() {
            let sets: Vec<HashSet<&str>> = [Subset::Train, Subset::Validation, Subset::Test]
                .into_iter()
                .map(|s| fold.subjects(s).iter().map(String::as_str).collect())
                .collect();
            ensure(
                sets[0].is_disjoint(&sets[1])
                    && sets[0].is_disjoint(&sets[2])
                    && sets[1].is_disjoint(&sets[2]),
                || format!("plan {plan_seed} fold {f}: subject in two subsets"),
            )?;
            ensure(sets.iter().map(HashSet::len).sum::<usize>() == subjects.len(), || {
                format!("plan {plan_seed} fold {f}: subsets do not cover all subjects")
            })?;
            for s in &sets[2] {
                ensure(tested.insert(*s), || format!("plan {plan_seed}: {s} tested twice"))?;
            }

            let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
            let train = fold.indices(&records, Subset::Train);
            let batch = rng.random_range(2..=16);
            let batches =
                balanced_batches(&labels, &train, batch, plan_seed).map_err(|e| e.to_string())?;
            for b in batches.batches.iter().filter(|b| b.len() == batch) {
                let pos = b.iter().filter(|&&i| labels[i].is_positive()).count();
                ensure(pos.abs_diff(b.len() - pos) <= 1, || {
                    format!("plan {plan_seed} fold {f}: batch with {pos} of {} positive", b.len())
                })?;
                batches_checked += 1;
            }
        }
        ensure(tested.len() == subjects.len(), || format!("plan {plan_seed}: test sets miss subjects"))?;
    }
    Ok(format!("100 plans leak-free, {batches_checked} batches balanced"))
}

// ---------- 5: rollout algebra ----------

fn random_stochastic(t: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut a = Array2::from_shape_simple_fn((t, t), || rng.random_range(0.0..1.0));
    for mut row in a.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    a
}

fn rollout_algebra() -> Check {
    let t = 17;
    for layers in [1, 4, 24] {
        let stack = vec![Array2::<f64>::eye(t); layers];
        let r = rollout_product(&stack).map_err(|e| e.to_string())?;
        ensure(r == Array2::<f64>::eye(t), || format!("identity rollout differs at L = {layers}"))?;
    }

    let mut rng = rng_from(5, 0xACCE);
    let layers: Vec<Array2<f64>> = (0..24).map(|_| random_stochastic(t, &mut rng)).collect();
    let mut worst = 0.0f64;
    for l in 1..=layers.len() {
        let r = rollout_product(&layers[..l]).map_err(|e| e.to_string())?;
        for row in r.rows() {
            worst = worst.max((row.sum() - 1.0).abs());
        }
        ensure(worst <= 1e-6, || format!("product of {l} layers off by {worst:e}"))?;
    }

    let uniform = Array2::from_elem((t, t), 1.0 / t as f64);
    let got = rollout_product(&[uniform.clone(), uniform]).map_err(|e| e.to_string())?;
    let mixed = Array2::from_shape_fn((t, t), |(i, j)| {
        0.5 / t as f64 + if i == j { 0.5 } else { 0.0 }
    });
    let mut oracle = Array2::<f64>::zeros((t, t));
    for i in 0..t {
        for j in 0..t {
            oracle[[i, j]] = (0..t).map(|m| mixed[[i, m]] * mixed[[m, j]]).sum();
        }
    }
    let err = (&got - &oracle).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    ensure(err <= 1e-12, || format!("uniform two-layer rollout off by {err:e}"))?;
    Ok(format!("identity at L = 1, 4, 24; 24 partial products (worst {worst:.1e}); uniform oracle {err:.1e}"))
}

// ---------- 6-8: synthetic end to end via the binary ----------

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.json"), PRESET).unwrap();
        Run { dir }
    }

    fn cmd(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .current_dir(self.dir.path())
            .args(["--config", "config.json"])
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> std::result::Result<(), String> {
        let out = self.cmd(args);
        ensure(out.status.success(), || {
            format!(
                "`{}` exited {:?}: {}",
                args.join(" "),
                out.status.code(),
                String::from_utf8_lossy(&out.stderr).trim()
            )
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn report(&self, run_id: &str) -> std::result::Result<(Vec<u8>, Value), String> {
        let path = self.preset_dir("out_dir").join(run_id).join("report.json");
        let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let json = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
        Ok((bytes, json))
    }

    fn preset_dir(&self, key: &str) -> PathBuf {
        let cfg: Value = serde_json::from_str(PRESET).unwrap();
        self.path(cfg[key].as_str().unwrap())
    }

    /// synth, cv, and both ablations; returns the elapsed time of synth + cv.
    fn battery(&self) -> std::result::Result<Duration, String> {
        let start = Instant::now();
        self.ok(&["synth"])?;
        self.ok(&["--set", "run_id=cv", "cv"])?;
        let elapsed = start.elapsed();
        self.ok(&["--set", "run_id=lstm", "ablate", "--which", "lstm"])?;
        self.ok(&["--set", "run_id=svm", "ablate", "--which", "svm"])?;
        Ok(elapsed)
    }
}

fn metric(v: &Value, path: &[&str]) -> std::result::Result<f64, String> {
    path.iter()
        .try_fold(v, |v, k| v.get(k))
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("report lacks {}", path.join(".")))
}

/// Mean-pooled stub features of the generated volumes are linearly separable.
fn perceptron_oracle(run: &Run) -> std::result::Result<usize, String> {
    let cfg: Value = serde_json::from_str(PRESET).unwrap();
    let spec: ExtractorSpec =
        serde_json::from_value(cfg["extractor"].clone()).map_err(|e| e.to_string())?;
    let prep: PreprocessConfig = match cfg.get("preprocess") {
        Some(p) => serde_json::from_value(p.clone()).map_err(|e| e.to_string())?,
        None => PreprocessConfig::default(),
    };
    let data_dir = run.path(cfg["data_dir"].as_str().unwrap());
    let records: Vec<VolumeRecord> = load_manifest(&data_dir.join("manifest.csv"))
        .and_then(|rs| rs.into_iter().map(|r| load_voxels(r, &data_dir)).collect())
        .map_err(|e| e.to_string())?;
    let extractor = build_extractor(&spec).map_err(|e| e.to_string())?;
    let seqs = extract_dataset(&records, extractor.as_ref(), &prep, None).map_err(|e| e.to_string())?;
    let xs: Vec<Array1<f64>> = seqs
        .iter()
        .map(|s| {
            let mut v = s.to_f64().mean_axis(ndarray::Axis(0)).unwrap().to_vec();
            v.push(1.0);
            Array1::from(v)
        })
        .collect();
    let ys: Vec<f64> = records
        .iter()
        .map(|r| if r.label.is_positive() { 1.0 } else { -1.0 })
        .collect();
    let mut w = Array1::<f64>::zeros(xs[0].len());
    for epoch in 1..=1000 {
        let mut errors = 0;
        for (x, &y) in xs.iter().zip(&ys) {
            if y * w.dot(x) <= 0.0 {
                w.scaled_add(y, x);
                errors += 1;
            }
        }
        if errors == 0 {
            return Ok(epoch);
        }
    }
    Err("perceptron did not reach zero training errors in 1000 epochs".into())
}

fn synthetic_end_to_end(run: &Run, elapsed: Duration) -> Check {
    let epochs = perceptron_oracle(run)?;
    ensure(elapsed < Duration::from_secs(600), || format!("synth + cv took {elapsed:.1?}"))?;
    let (_, report) = run.report("cv")?;
    let auc = metric(&report, &["cross_validation", "mean", "auc"])?;
    let f1 = metric(&report, &["cross_validation", "mean", "f1"])?;
    ensure(auc >= 0.90, || format!("mean AUC {auc:.4}"))?;
    ensure(f1 >= 0.85, || format!("mean F1 {f1:.4}"))?;
    let folds = report["folds"].as_array().ok_or("report lacks folds")?;
    ensure(folds.len() == 5, || format!("{} folds", folds.len()))?;
    for fold in folds {
        let first = metric(fold, &["initial_val_loss"])?;
        let best = metric(fold, &["best_val_loss"])?;
        ensure(best < first, || format!("fold {}: validation loss {first} -> {best}", fold["fold"]))?;
    }
    Ok(format!(
        "perceptron separates in {epochs} epochs; synth + cv {elapsed:.1?}; mean AUC {auc:.4}, F1 {f1:.4}"
    ))
}

fn ablation_battery(run: &Run) -> Check {
    let (_, lstm) = run.report("lstm")?;
    let lstm_auc = metric(&lstm, &["cross_validation", "mean", "auc"])?;
    ensure(lstm_auc >= 0.85, || format!("LSTM mean AUC {lstm_auc:.4}"))?;
    let (_, svm) = run.report("svm")?;
    let slices = svm["baseline"]["slices"].as_array().ok_or("report lacks slices")?;
    ensure(slices.len() == 5, || format!("{} slice reports", slices.len()))?;
    let mut best_single = f64::NEG_INFINITY;
    for s in slices {
        best_single = best_single.max(metric(s, &["report", "mean", "acc"])?);
    }
    let voting = metric(&svm, &["baseline", "voting", "mean", "acc"])?;
    ensure(voting >= best_single - 0.02, || {
        format!("voting accuracy {voting:.4} vs best single slice {best_single:.4}")
    })?;
    Ok(format!(
        "LSTM AUC {lstm_auc:.4}; 5 slice reports + voting; voting ACC {voting:.4} vs best slice {best_single:.4}"
    ))
}

fn determinism(first: &Run) -> Check {
    let second = Run::new();
    second.battery()?;
    for id in ["cv", "lstm", "svm"] {
        let (a, _) = first.report(id)?;
        let (b, _) = second.report(id)?;
        ensure(a == b, || format!("{id}/report.json differs between runs"))?;
    }
    Ok("cv, lstm and svm report.json byte-identical across two runs".into())
}

// ---------- 9: full-scale path ----------

/// Set both to run the clinical reproduction.
const DATA_ENV: &str = "SLICEGRU_OCT_DATA";
const WEIGHTS_ENV: &str = "SLICEGRU_VIT_WEIGHTS";

fn full_scale(run: &Run) -> Check {
    match (std::env::var(DATA_ENV), std::env::var(WEIGHTS_ENV)) {
        (Ok(data), Ok(weights)) => {
            let out = Command::new(BIN)
                .current_dir(run.dir.path())
                .args(["--set", &format!("data_dir={data}")])
                .args(["--set", &format!("extractor.weights={weights}")])
                .args(["--set", "run_id=full", "cv"])
                .output()
                .unwrap();
            ensure(out.status.success(), || {
                format!("cv exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr).trim())
            })?;
            let report: Value =
                serde_json::from_slice(&fs::read(run.path("runs/full/report.json")).unwrap()).unwrap();
            let auc = metric(&report, &["cross_validation", "mean", "auc"])?;
            let f1 = metric(&report, &["cross_validation", "mean", "f1"])?;
            ensure((auc - 0.9420).abs() <= 0.03 && (f1 - 0.9301).abs() <= 0.03, || {
                format!("AUC {auc:.4}, F1 {f1:.4} outside the reference band")
            })?;
            Ok(format!("AUC {auc:.4}, F1 {f1:.4}"))
        }
        _ => {
            // default extractor is the ViT adapter with no weights configured
            let out = Command::new(BIN)
                .current_dir(run.dir.path())
                .args(["--set", &format!("data_dir={}", run.preset_dir("data_dir").display()), "cv"])
                .env("RUST_LOG", "warn")
                .output()
                .unwrap();
            ensure(out.status.code() == Some(3), || {
                format!("expected exit 3 without assets, got {:?}", out.status.code())
            })?;
            Ok(format!("skipped ({DATA_ENV}/{WEIGHTS_ENV} unset); cv degrades to exit 3"))
        }
    }
}

fn report_line(n: usize, name: &str, outcome: &Check) -> bool {
    match outcome {
        Ok(detail) => println!("criterion {n} [{name}]: PASS - {detail}"),
        Err(detail) => println!("criterion {n} [{name}]: FAIL - {detail}"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters from other harnesses land here too
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut all = true;
    all &= report_line(1, "gradient oracle", &gradient_oracle());
    all &= report_line(2, "focal reduction", &focal_reduction());
    all &= report_line(3, "metric oracles", &metric_oracles());
    all &= report_line(4, "split safety", &split_safety());
    all &= report_line(5, "rollout algebra", &rollout_algebra());

    let run = Run::new();
    match run.battery() {
        Ok(elapsed) => {
            all &= report_line(6, "synthetic end to end", &synthetic_end_to_end(&run, elapsed));
            all &= report_line(7, "ablation battery", &ablation_battery(&run));
            all &= report_line(8, "determinism", &determinism(&run));
        }
        Err(e) => {
            for (n, name) in [(6, "synthetic end to end"), (7, "ablation battery"), (8, "determinism")] {
                all &= report_line(n, name, &Err(e.clone()));
            }
        }
    }
    // optional: failure here is reported but does not fail the battery
    report_line(9, "full-scale reproduction (optional)", &full_scale(&run));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
