use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use slicegru::baselines::{run_svm_baseline, SvmBaselineReport};
use slicegru::data::{
    load_manifest, load_voxels, make_fold_plan, preprocess, write_dataset, FoldPlan, Subset,
    VolumeRecord,
};
use slicegru::eval::{
    cross_validate, make_synthetic_dataset, run_fold, CrossValReport, FoldOutcome, HeadConfig,
    METRIC_NAMES,
};
use slicegru::explain::{
    attention_rollout, export_embeddings, pooled_embeddings, render_heatmap,
    slice_feature_embeddings,
};
use slicegru::features::{
    build_extractor, extract_attention, extract_dataset, ExtractorSpec, FeatureCache,
};
use slicegru::model::{AnyHead, CellKind};
use slicegru::train::TrainConfig;

use crate::config::RunConfig;
use crate::{Ablation, CliError, Grid};

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Creates the run directory and echoes the resolved configuration into it.
fn prepare_run_dir(cfg: &RunConfig, default_id: &str) -> Result<PathBuf> {
    let dir = cfg.run_dir(default_id);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

fn subdir(parent: &Path, name: &str) -> Result<PathBuf> {
    let dir = parent.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn read_manifest(cfg: &RunConfig) -> Result<Vec<VolumeRecord>> {
    let path = cfg.manifest_path();
    if !path.is_file() {
        return Err(CliError::Usage(format!("manifest {} not found", path.display())));
    }
    Ok(load_manifest(&path)?)
}

fn load_records(cfg: &RunConfig) -> Result<Vec<VolumeRecord>> {
    let records = read_manifest(cfg)?;
    if records.is_empty() {
        return Err(CliError::Data("manifest lists no volumes".into()));
    }
    records
        .into_iter()
        .map(|r| {
            let id = r.volume_id.clone();
            load_voxels(r, &cfg.data_dir).map_err(|e| CliError::Data(format!("volume `{id}`: {e}")))
        })
        .collect()
}

struct Features {
    sequences: Vec<Array2<f64>>,
    fingerprint: String,
}

fn load_features(cfg: &RunConfig, spec: &ExtractorSpec, records: &[VolumeRecord]) -> Result<Features> {
    let extractor = build_extractor(spec)?;
    let cache = cfg.cache_dir.as_ref().map(FeatureCache::new);
    let fingerprint = spec.fingerprint(&cfg.preprocess);
    info!("extracting features for {} volumes ({fingerprint})", records.len());
    let seqs = extract_dataset(records, extractor.as_ref(), &cfg.preprocess, cache.as_ref())?;
    Ok(Features {
        sequences: seqs.iter().map(|s| s.to_f64()).collect(),
        fingerprint,
    })
}

#[derive(Serialize)]
struct IngestFailure {
    volume_id: String,
    error: String,
}

#[derive(Serialize)]
struct IngestReport {
    volumes: usize,
    ok: usize,
    failures: Vec<IngestFailure>,
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let records = read_manifest(cfg)?;
    let mut failures = Vec::new();
    for r in &records {
        if let Err(e) = load_voxels(r.clone(), &cfg.data_dir) {
            eprintln!("{}: {e}", r.volume_id);
            failures.push(IngestFailure {
                volume_id: r.volume_id.clone(),
                error: e.to_string(),
            });
        }
    }
    let dir = prepare_run_dir(cfg, "ingest")?;
    let report = IngestReport {
        volumes: records.len(),
        ok: records.len() - failures.len(),
        failures,
    };
    write_json(&dir.join("report.json"), &report)?;
    if report.failures.is_empty() {
        println!("{} volumes OK", report.volumes);
        Ok(())
    } else {
        let ids: Vec<&str> = report.failures.iter().map(|f| f.volume_id.as_str()).collect();
        Err(CliError::Data(format!(
            "{} of {} volumes failed: {}",
            ids.len(),
            report.volumes,
            ids.join(", ")
        )))
    }
}

#[derive(Serialize)]
struct ExtractReport {
    volumes: usize,
    fingerprint: String,
    embedding_dim: usize,
    cache_dir: Option<PathBuf>,
}

pub fn extract(cfg: &RunConfig) -> Result<()> {
    if cfg.cache_dir.is_none() {
        return Err(CliError::Usage("extract needs cache_dir to store features".into()));
    }
    let records = load_records(cfg)?;
    let feats = load_features(cfg, &cfg.extractor, &records)?;
    let dir = prepare_run_dir(cfg, "extract")?;
    write_json(
        &dir.join("report.json"),
        &ExtractReport {
            volumes: records.len(),
            fingerprint: feats.fingerprint,
            embedding_dim: cfg.extractor.embedding_dim,
            cache_dir: cfg.cache_dir.clone(),
        },
    )?;
    println!("{} volumes extracted", records.len());
    Ok(())
}

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    n_train: usize,
    n_validation: usize,
    n_test: usize,
    epochs_run: usize,
    best_epoch: usize,
    initial_val_loss: f64,
    best_val_loss: f64,
    stopped_early: bool,
}

fn summarize(records: &[VolumeRecord], plan: &FoldPlan, f: &FoldOutcome) -> FoldSummary {
    let fold = &plan.folds[f.fold];
    FoldSummary {
        fold: f.fold,
        n_train: fold.indices(records, Subset::Train).len(),
        n_validation: fold.indices(records, Subset::Validation).len(),
        n_test: fold.indices(records, Subset::Test).len(),
        epochs_run: f.history.epochs.len(),
        best_epoch: f.history.best_epoch,
        initial_val_loss: f.history.initial_val_loss,
        best_val_loss: f.history.best_val_loss,
        stopped_early: f.history.stopped_early,
    }
}

/// Writes a fold's checkpoint, history and predictions under `dir`.
fn write_fold_artifacts(dir: &Path, f: &FoldOutcome, fingerprint: &str, seed: u64) -> Result<()> {
    let ckpt = subdir(dir, "checkpoints")?.join(format!("fold{}.ckpt", f.fold));
    f.head.save(
        &ckpt,
        serde_json::json!({
            "fold": f.fold,
            "seed": seed,
            "best_epoch": f.history.best_epoch,
            "features": fingerprint,
        }),
    )?;
    let fold_dir = subdir(&dir.join("folds"), &format!("fold{}", f.fold))?;
    f.history
        .write_csv(&fold_dir.join("history.csv"))
        .map_err(CliError::from)?;
    let mut preds = String::from("volume_id,label,score\n");
    for p in &f.predictions {
        preds.push_str(&format!("{},{},{:.17e}\n", p.volume_id, p.label.as_u8(), p.score));
    }
    write_text(&fold_dir.join("predictions.csv"), &preds)
}

fn combined_history(folds: &[FoldOutcome]) -> String {
    let mut out = String::from("fold,epoch,train_loss,val_loss,val_f1,lr\n");
    for f in folds {
        for line in f.history.to_csv().lines().skip(1) {
            out.push_str(&format!("{},{line}\n", f.fold));
        }
    }
    out
}

#[derive(Serialize)]
struct CvReportFile<'a> {
    command: &'a str,
    seed: u64,
    k: usize,
    features: &'a str,
    head: HeadConfig,
    train: TrainConfig,
    cross_validation: &'a CrossValReport,
    folds: Vec<FoldSummary>,
}

pub fn cv(cfg: &RunConfig, name: &str) -> Result<()> {
    if cfg.k < 2 {
        return Err(CliError::Usage(format!("k must be at least 2, got {}", cfg.k)));
    }
    let records = load_records(cfg)?;
    let feats = load_features(cfg, &cfg.extractor, &records)?;
    info!("{}-fold cross-validation, {:?} head", cfg.k, cfg.head.cell);
    let out = cross_validate(&records, &feats.sequences, cfg.k, cfg.seed, &cfg.head, &cfg.train)?;

    let dir = prepare_run_dir(cfg, name)?;
    out.plan.save(&dir.join("fold_plan.json"))?;
    for f in &out.folds {
        write_fold_artifacts(&dir, f, &feats.fingerprint, cfg.seed)?;
    }
    write_text(&dir.join("history.csv"), &combined_history(&out.folds))?;
    let report = CvReportFile {
        command: name,
        seed: cfg.seed,
        k: cfg.k,
        features: &feats.fingerprint,
        head: cfg.head,
        train: cfg.train,
        cross_validation: &out.report,
        folds: out.folds.iter().map(|f| summarize(&records, &out.plan, f)).collect(),
    };
    write_json(&dir.join("report.json"), &report)?;
    let table = out.report.to_table();
    write_text(&dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct TrainReportFile<'a> {
    command: &'a str,
    seed: u64,
    fold: usize,
    features: &'a str,
    head: HeadConfig,
    train: TrainConfig,
    summary: FoldSummary,
    test: &'a slicegru::eval::MetricsReport,
}

pub fn train(cfg: &RunConfig, fold: usize) -> Result<()> {
    if cfg.k < 2 {
        return Err(CliError::Usage(format!("k must be at least 2, got {}", cfg.k)));
    }
    if fold >= cfg.k {
        return Err(CliError::Usage(format!("fold {fold} out of range for k = {}", cfg.k)));
    }
    let records = load_records(cfg)?;
    let feats = load_features(cfg, &cfg.extractor, &records)?;
    let plan = make_fold_plan(&records, cfg.k, cfg.seed)?;
    let out = run_fold(&records, &feats.sequences, &plan, fold, &cfg.head, &cfg.train)?;

    let dir = prepare_run_dir(cfg, "train")?;
    plan.save(&dir.join("fold_plan.json"))?;
    write_fold_artifacts(&dir, &out, &feats.fingerprint, cfg.seed)?;
    out.history
        .write_csv(&dir.join("history.csv"))
        .map_err(CliError::from)?;
    write_json(
        &dir.join("report.json"),
        &TrainReportFile {
            command: "train",
            seed: cfg.seed,
            fold,
            features: &feats.fingerprint,
            head: cfg.head,
            train: cfg.train,
            summary: summarize(&records, &plan, &out),
            test: &out.metrics,
        },
    )?;
    println!(
        "fold {fold}: best epoch {}, test AUC {:.4}, F1 {:.4}",
        out.history.best_epoch, out.metrics.auc, out.metrics.f1
    );
    Ok(())
}

#[derive(Serialize, Clone)]
struct SweepCell {
    hidden1: usize,
    hidden2: usize,
    dropout: f64,
    alpha: f64,
    gamma: f64,
    best_epoch: usize,
    val_loss: f64,
    val_f1: f64,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    command: &'a str,
    grid: &'a str,
    seed: u64,
    fold: usize,
    metric: &'a str,
    features: &'a str,
    cells: Vec<SweepCell>,
}

fn grid_points(cfg: &RunConfig, grid: Grid) -> Result<Vec<(HeadConfig, TrainConfig)>> {
    let s = &cfg.sweep;
    let mut points = Vec::new();
    match grid {
        Grid::GruSizes => {
            let mut sizes = s.gru_sizes.clone();
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            sizes.dedup();
            for (i, &h1) in sizes.iter().enumerate() {
                for &h2 in &sizes[i..] {
                    points.push((
                        HeadConfig {
                            hidden1: h1,
                            hidden2: h2,
                            ..cfg.head
                        },
                        cfg.train,
                    ));
                }
            }
        }
        Grid::Dropout => {
            for &d in &s.dropouts {
                points.push((HeadConfig { dropout: d, ..cfg.head }, cfg.train));
            }
        }
        Grid::Focal => {
            for &alpha in &s.alphas {
                for &gamma in &s.gammas {
                    let mut t = cfg.train;
                    t.focal.alpha = alpha;
                    t.focal.gamma = gamma;
                    points.push((cfg.head, t));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(CliError::Usage("sweep grid is empty".into()));
    }
    for (h, t) in &points {
        t.validate()?;
        if !(0.0..1.0).contains(&h.dropout) || h.hidden1 == 0 || h.hidden2 == 0 {
            return Err(CliError::Usage(format!("invalid grid point {h:?}")));
        }
    }
    Ok(points)
}

fn grid_name(grid: Grid) -> &'static str {
    match grid {
        Grid::GruSizes => "gru_sizes",
        Grid::Dropout => "dropout",
        Grid::Focal => "focal",
    }
}

fn sweep_table(grid: Grid, cfg: &RunConfig, cells: &[SweepCell]) -> String {
    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    let mut out = format!("validation F1 (%) over the {} grid\n", grid_name(grid));
    match grid {
        Grid::GruSizes => {
            let mut sizes = cfg.sweep.gru_sizes.clone();
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            sizes.dedup();
            out.push_str(&format!("{:>14}", "GRU-1 \\ GRU-2"));
            for s in &sizes {
                out.push_str(&format!("{s:>10}"));
            }
            out.push('\n');
            for &h1 in &sizes {
                out.push_str(&format!("{h1:>14}"));
                for &h2 in &sizes {
                    let cell = cells.iter().find(|c| c.hidden1 == h1 && c.hidden2 == h2);
                    out.push_str(&format!("{:>10}", cell.map_or("-".to_string(), |c| pct(c.val_f1))));
                }
                out.push('\n');
            }
        }
        Grid::Dropout => {
            out.push_str(&format!("{:>8}{:>10}\n", "dropout", "F1"));
            for c in cells {
                out.push_str(&format!("{:>8.2}{:>10}\n", c.dropout, pct(c.val_f1)));
            }
        }
        Grid::Focal => {
            out.push_str(&format!("{:>8}", "α \\ γ"));
            for g in &cfg.sweep.gammas {
                out.push_str(&format!("{g:>10}"));
            }
            out.push('\n');
            for &a in &cfg.sweep.alphas {
                out.push_str(&format!("{a:>8}"));
                for &g in &cfg.sweep.gammas {
                    let cell = cells.iter().find(|c| c.alpha == a && c.gamma == g);
                    out.push_str(&format!("{:>10}", cell.map_or("-".to_string(), |c| pct(c.val_f1))));
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn sweep(cfg: &RunConfig, grid: Grid) -> Result<()> {
    let points = grid_points(cfg, grid)?;
    if cfg.sweep.fold >= cfg.k {
        return Err(CliError::Usage(format!(
            "sweep fold {} out of range for k = {}",
            cfg.sweep.fold, cfg.k
        )));
    }
    let records = load_records(cfg)?;
    let feats = load_features(cfg, &cfg.extractor, &records)?;
    let plan = make_fold_plan(&records, cfg.k, cfg.seed)?;
    info!("sweeping {} grid points", points.len());
    let cells: Vec<SweepCell> = points
        .par_iter()
        .map(|(head, train)| {
            let out = run_fold(&records, &feats.sequences, &plan, cfg.sweep.fold, head, train)?;
            let best = &out.history.epochs[out.history.best_epoch];
            Ok(SweepCell {
                hidden1: head.hidden1,
                hidden2: head.hidden2,
                dropout: head.dropout,
                alpha: train.focal.alpha,
                gamma: train.focal.gamma,
                best_epoch: out.history.best_epoch,
                val_loss: best.val_loss,
                val_f1: best.val_f1,
            })
        })
        .collect::<std::result::Result<_, slicegru::Error>>()?;

    let name = grid_name(grid);
    let dir = prepare_run_dir(cfg, &format!("sweep-{name}"))?;
    write_json(
        &dir.join("report.json"),
        &SweepReport {
            command: "sweep",
            grid: name,
            seed: cfg.seed,
            fold: cfg.sweep.fold,
            metric: "validation F1 at the lowest-validation-loss epoch",
            features: &feats.fingerprint,
            cells: cells.clone(),
        },
    )?;
    let table = sweep_table(grid, cfg, &cells);
    write_text(&dir.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct SvmReportFile<'a> {
    command: &'a str,
    seed: u64,
    k: usize,
    features: &'a str,
    baseline: &'a SvmBaselineReport,
}

fn svm_table(report: &SvmBaselineReport) -> String {
    let mut out = String::from("per-slice SVM and majority voting, mean over folds (%)\n");
    out.push_str(&format!("{:<18}", "model"));
    for n in METRIC_NAMES {
        out.push_str(&format!("{n:>9}"));
    }
    out.push('\n');
    let mut row = |name: String, r: &CrossValReport| {
        out.push_str(&format!("{name:<18}"));
        for v in r.mean.values() {
            out.push_str(&format!("{:>9.2}", 100.0 * v));
        }
        out.push('\n');
    };
    for s in &report.slices {
        row(format!("slice {}", s.slice_index), &s.report);
    }
    row("majority voting".into(), &report.voting);
    out
}

pub fn ablate(cfg: &RunConfig, which: Ablation) -> Result<()> {
    match which {
        Ablation::Lstm => {
            let mut c = cfg.clone();
            c.head.cell = CellKind::Lstm;
            cv(&c, "ablate-lstm")
        }
        Ablation::Resnet => {
            let mut c = cfg.clone();
            let weights = cfg.extractor.weights.clone();
            c.extractor = ExtractorSpec {
                weights,
                ..ExtractorSpec::resnet34()
            };
            // fail before touching the data when no encoder is available
            build_extractor(&c.extractor)?;
            cv(&c, "ablate-resnet")
        }
        Ablation::Svm => {
            if cfg.k < 2 {
                return Err(CliError::Usage(format!("k must be at least 2, got {}", cfg.k)));
            }
            let records = load_records(cfg)?;
            let feats = load_features(cfg, &cfg.extractor, &records)?;
            let plan = make_fold_plan(&records, cfg.k, cfg.seed)?;
            let report = run_svm_baseline(&records, &feats.sequences, &plan, &cfg.svm)?;
            let dir = prepare_run_dir(cfg, "ablate-svm")?;
            plan.save(&dir.join("fold_plan.json"))?;
            write_json(
                &dir.join("report.json"),
                &SvmReportFile {
                    command: "ablate-svm",
                    seed: cfg.seed,
                    k: cfg.k,
                    features: &feats.fingerprint,
                    baseline: &report,
                },
            )?;
            let table = svm_table(&report);
            write_text(&dir.join("report.txt"), &table)?;
            print!("{table}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ExplainSlice {
    slice_index: usize,
    image: String,
    layers: usize,
    tokens: usize,
    max_row_sum_error: f64,
    heatmap_argmax: (usize, usize),
}

#[derive(Serialize)]
struct ExplainReport<'a> {
    command: &'a str,
    volume_id: &'a str,
    features: &'a str,
    slices: Vec<ExplainSlice>,
    embeddings: Vec<String>,
}

pub fn explain(cfg: &RunConfig) -> Result<()> {
    let ex = &cfg.explain;
    if ex.slices.is_empty() {
        return Err(CliError::Usage("no slices requested".into()));
    }
    if let Some(ck) = &ex.checkpoint {
        if !ck.is_file() {
            return Err(CliError::Data(format!("checkpoint {} not found", ck.display())));
        }
    }
    let spec = ExtractorSpec {
        emits_attention: true,
        ..cfg.extractor.clone()
    };
    let extractor = build_extractor(&spec)?;
    let records = load_records(cfg)?;
    let record = match &ex.volume_id {
        Some(id) => records
            .iter()
            .find(|r| &r.volume_id == id)
            .ok_or_else(|| CliError::Usage(format!("unknown volume_id `{id}`")))?,
        None => &records[0],
    };
    if let Some(&s) = ex.slices.iter().find(|&&s| s == 0 || s > record.depth()) {
        return Err(CliError::Usage(format!(
            "slice {s} outside 1..={} of `{}`",
            record.depth(),
            record.volume_id
        )));
    }
    let head = match &ex.checkpoint {
        Some(ck) => Some(AnyHead::load(ck)?.0),
        None => None,
    };

    let dir = prepare_run_dir(cfg, "explain")?;
    let images = subdir(&dir, "images")?;
    let pre = preprocess(record, &cfg.preprocess)?;
    let mut slices = Vec::new();
    for &s in &ex.slices {
        let stack = extract_attention(extractor.as_ref(), &pre, s)?;
        let map = attention_rollout(&stack)?;
        let name = format!("{}-slice{s:02}.png", record.volume_id);
        render_heatmap(&map, record.slice(s - 1), &images.join(&name))?;
        let err = map
            .rollout
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max);
        let argmax = map
            .heatmap
            .indexed_iter()
            .fold(((0, 0), f64::NEG_INFINITY), |acc, (ix, &v)| if v > acc.1 { (ix, v) } else { acc })
            .0;
        slices.push(ExplainSlice {
            slice_index: s,
            image: format!("images/{name}"),
            layers: stack.layers.len(),
            tokens: map.rollout.nrows(),
            max_row_sum_error: err,
            heatmap_argmax: argmax,
        });
    }

    let feats = load_features(cfg, &cfg.extractor, &records)?;
    let emb_dir = subdir(&dir, "embeddings")?;
    let mut embeddings = Vec::new();
    let es = ex.embedding_slice;
    let slice_export = slice_feature_embeddings(&records, &feats.sequences, es, &feats.fingerprint)?;
    let name = format!("slice{es:02}.csv");
    export_embeddings(&slice_export, &emb_dir.join(&name))?;
    embeddings.push(format!("embeddings/{name}"));
    if let Some(head) = &head {
        if head.shape().input_dim != cfg.extractor.embedding_dim {
            return Err(CliError::Usage(format!(
                "checkpoint expects {}-wide features, extractor gives {}",
                head.shape().input_dim,
                cfg.extractor.embedding_dim
            )));
        }
        let pooled = pooled_embeddings(&records, &feats.sequences, head, &feats.fingerprint)?;
        export_embeddings(&pooled, &emb_dir.join("head_pooled.csv"))?;
        embeddings.push("embeddings/head_pooled.csv".into());
    }
    write_json(
        &dir.join("report.json"),
        &ExplainReport {
            command: "explain",
            volume_id: &record.volume_id,
            features: &feats.fingerprint,
            slices,
            embeddings,
        },
    )?;
    println!("{} heatmaps written to {}", ex.slices.len(), images.display());
    Ok(())
}

#[derive(Serialize)]
struct SynthReport {
    volumes: usize,
    n_pos: usize,
    n_neg: usize,
    shape: (usize, usize, usize),
    manifest: String,
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let records = make_synthetic_dataset(&cfg.synth)?;
    let manifest = write_dataset(&cfg.data_dir, &records)?;
    let dir = prepare_run_dir(cfg, "synth")?;
    write_json(
        &dir.join("report.json"),
        &SynthReport {
            volumes: records.len(),
            n_pos: cfg.synth.n_pos,
            n_neg: cfg.synth.n_neg,
            shape: (cfg.synth.depth, cfg.synth.height, cfg.synth.width),
            manifest: manifest.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        },
    )?;
    println!("{} volumes written to {}", records.len(), manifest.display());
    Ok(())
}
