use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_folds, CrossValReport};
use super::metrics::MetricsReport;
use crate::data::{make_fold_plan, FoldPlan, Label, Subset, VolumeRecord};
use crate::error::{Error, Result};
use crate::model::{AnyHead, CellKind, HeadShape};
use crate::rng::derive_seed;
use crate::train::{train_any, TrainConfig, TrainHistory};

/// Architecture of the sequence head; the input width comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    #[serde(default)]
    pub cell: CellKind,
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            cell: CellKind::Gru,
            hidden1: 256,
            hidden2: 128,
            dropout: 0.3,
        }
    }
}

impl HeadConfig {
    pub fn shape(&self, input_dim: usize) -> HeadShape {
        HeadShape {
            input_dim,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestPrediction {
    pub volume_id: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub head: AnyHead,
    pub history: TrainHistory,
    pub predictions: Vec<TestPrediction>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub plan: FoldPlan,
    pub folds: Vec<FoldOutcome>,
    pub report: CrossValReport,
}

/// Seed of the head initialization for `fold`.
pub fn fold_init_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, 0x1000 + fold as u64)
}

/// Seed of the batch order and dropout masks for `fold`.
pub fn fold_train_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, 0x2000 + fold as u64)
}

/// Trains and evaluates one head for a single fold of `plan`.
pub fn run_fold(
    records: &[VolumeRecord],
    sequences: &[Array2<f64>],
    plan: &FoldPlan,
    fold: usize,
    head: &HeadConfig,
    train: &TrainConfig,
) -> Result<FoldOutcome> {
    let f = plan
        .folds
        .get(fold)
        .ok_or_else(|| Error::InvalidArgument(format!("fold {fold} not in a {}-fold plan", plan.k)))?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    let train_idx = f.indices(records, Subset::Train);
    let val_idx = f.indices(records, Subset::Validation);
    let test_idx = f.indices(records, Subset::Test);
    if test_idx.is_empty() {
        return Err(Error::Precondition(format!("fold {fold} has no test volumes")));
    }
    let input_dim = sequences[0].ncols();
    let init = AnyHead::init(
        head.cell,
        head.shape(input_dim),
        head.dropout,
        fold_init_seed(plan.seed, fold),
    )?;
    let mut cfg = *train;
    cfg.optim.seed = fold_train_seed(plan.seed ^ train.optim.seed, fold);
    let (trained, history) = train_any(sequences, &labels, &train_idx, &val_idx, init, &cfg)?;

    let scores: Vec<f64> = test_idx
        .iter()
        .map(|&i| trained.predict(sequences[i].view()))
        .collect::<Result<_>>()?;
    let test_labels: Vec<Label> = test_idx.iter().map(|&i| labels[i]).collect();
    let metrics = MetricsReport::from_scores(&scores, &test_labels)?;
    let predictions = test_idx
        .iter()
        .zip(&scores)
        .map(|(&i, &score)| TestPrediction {
            volume_id: records[i].volume_id.clone(),
            label: labels[i],
            score,
        })
        .collect();
    Ok(FoldOutcome {
        fold,
        head: trained,
        history,
        predictions,
        metrics,
    })
}

/// Subject-level k-fold cross-validation over precomputed sequences
/// (`sequences[i]` belongs to `records[i]`). Folds run in parallel; every
/// fold is seeded independently so the result does not depend on scheduling.
pub fn cross_validate(
    records: &[VolumeRecord],
    sequences: &[Array2<f64>],
    k: usize,
    seed: u64,
    head: &HeadConfig,
    train: &TrainConfig,
) -> Result<CvOutcome> {
    if records.len() != sequences.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} records but {} feature sequences",
            records.len(),
            sequences.len()
        )));
    }
    let plan = make_fold_plan(records, k, seed)?;
    let folds: Vec<FoldOutcome> = (0..k)
        .into_par_iter()
        .map(|f| run_fold(records, sequences, &plan, f, head, train))
        .collect::<Result<_>>()?;
    let reports: Vec<MetricsReport> = folds.iter().map(|f| f.metrics.clone()).collect();
    let report = aggregate_folds(&reports)?;
    Ok(CvOutcome { plan, folds, report })
}
