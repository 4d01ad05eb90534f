//! Entropy-guided slice selection with per-slice linear SVMs on gain-ratio
//! selected features, combined by majority vote.

mod entropy;
mod gain_ratio;
mod svm;

pub use entropy::{
    select_from_entropies, select_slices, select_slices_dataset, slice_entropy, slice_entropy_real,
    volume_entropies, SliceSelection, DEFAULT_CENTER, SELECTED_SLICES,
};
pub use gain_ratio::{equal_frequency_cells, gain_ratio, rank_features, GainRatioRanking, DEFAULT_BINS};
pub use svm::{
    pegasos_step, svm_objective, train_linear_svm, LinearSvmModel, Standardizer, SvmConfig,
};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FoldPlan, Label, Subset, VolumeRecord};
use crate::error::{Error, Result};
use crate::eval::{aggregate_folds, CrossValReport, MetricsReport};
use crate::rng::derive_seed;

/// Majority label of an odd number of votes.
pub fn majority_vote(votes: &[Label]) -> Result<Label> {
    if votes.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "majority vote needs an odd number of votes, got {}",
            votes.len()
        )));
    }
    let pos = votes.iter().filter(|v| v.is_positive()).count();
    Ok(if 2 * pos > votes.len() {
        Label::Glaucoma
    } else {
        Label::Normal
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmBaselineConfig {
    pub center: usize,
    pub top_k: usize,
    pub bins: usize,
    pub svm: SvmConfig,
}

impl Default for SvmBaselineConfig {
    fn default() -> Self {
        SvmBaselineConfig {
            center: DEFAULT_CENTER,
            top_k: 128,
            bins: DEFAULT_BINS,
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceBaselineReport {
    pub slice_index: usize,
    /// Selected feature columns, one list per fold.
    pub selected_features: Vec<Vec<usize>>,
    pub report: CrossValReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmBaselineReport {
    pub config: SvmBaselineConfig,
    pub selection: SliceSelection,
    pub discretization: String,
    pub slices: Vec<SliceBaselineReport>,
    pub voting: CrossValReport,
}

struct SliceFold {
    selected: Vec<usize>,
    predictions: Vec<Label>,
    metrics: MetricsReport,
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn run_slice_fold(
    sequences: &[Array2<f64>],
    labels: &[Label],
    fit_idx: &[usize],
    test_idx: &[usize],
    row: usize,
    cfg: &SvmBaselineConfig,
    seed: u64,
) -> Result<SliceFold> {
    let gather = |idx: &[usize]| {
        let e = sequences[idx[0]].ncols();
        let mut x = Array2::zeros((idx.len(), e));
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&sequences[i].row(row));
        }
        x
    };
    let x_fit = gather(fit_idx);
    let y_fit: Vec<Label> = fit_idx.iter().map(|&i| labels[i]).collect();
    let ranking = rank_features(x_fit.view(), &y_fit, cfg.top_k, cfg.bins)?;
    let x_fit = x_fit.select(ndarray::Axis(1), &ranking.selected);
    let scaler = Standardizer::fit(x_fit.view())?;
    let svm_cfg = SvmConfig { seed, ..cfg.svm };
    let model = train_linear_svm(scaler.apply(x_fit.view()).view(), &y_fit, &svm_cfg)?;

    let x_test = scaler.apply(gather(test_idx).select(ndarray::Axis(1), &ranking.selected).view());
    let decisions: Vec<f64> = x_test.rows().into_iter().map(|r| model.decision(r)).collect();
    let predictions = decisions
        .iter()
        .map(|&d| if d >= 0.0 { Label::Glaucoma } else { Label::Normal })
        .collect();
    let scores: Vec<f64> = decisions.iter().map(|&d| logistic(d)).collect();
    let y_test: Vec<Label> = test_idx.iter().map(|&i| labels[i]).collect();
    Ok(SliceFold {
        selected: ranking.selected,
        predictions,
        metrics: MetricsReport::from_scores(&scores, &y_test)?,
    })
}

/// Per fold of `plan`, fits gain-ratio selection, standardization and an SVM
/// for each selected slice on the fold's train and validation subjects, then
/// scores the test subjects per slice and by majority vote.
///
/// The slice selection comes from the label-free mean entropy profile of all
/// volumes, so no label information crosses folds.
pub fn run_svm_baseline(
    records: &[VolumeRecord],
    sequences: &[Array2<f64>],
    plan: &FoldPlan,
    cfg: &SvmBaselineConfig,
) -> Result<SvmBaselineReport> {
    if records.len() != sequences.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} records but {} feature sequences",
            records.len(),
            sequences.len()
        )));
    }
    let selection = select_slices_dataset(records, cfg.center)?;
    if let Some(s) = sequences.iter().find(|s| s.nrows() != selection.entropies.len()) {
        return Err(Error::ShapeMismatch(format!(
            "feature sequence has {} rows, volumes have {} slices",
            s.nrows(),
            selection.entropies.len()
        )));
    }
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();

    let mut per_slice: Vec<Vec<SliceFold>> = (0..SELECTED_SLICES).map(|_| Vec::new()).collect();
    let mut voting = Vec::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let mut fit_idx = fold.indices(records, Subset::Train);
        fit_idx.extend(fold.indices(records, Subset::Validation));
        fit_idx.sort_unstable();
        let test_idx = fold.indices(records, Subset::Test);
        if fit_idx.is_empty() || test_idx.is_empty() {
            return Err(Error::Precondition(format!("fold {f} has an empty subset")));
        }
        let results: Vec<SliceFold> = selection
            .indices
            .par_iter()
            .map(|&s| {
                let seed = derive_seed(cfg.svm.seed, (f * 1000 + s) as u64);
                run_slice_fold(sequences, &labels, &fit_idx, &test_idx, s - 1, cfg, seed)
            })
            .collect::<Result<_>>()?;
        let mut vote_scores = Vec::with_capacity(test_idx.len());
        for t in 0..test_idx.len() {
            let votes: Vec<Label> = results.iter().map(|r| r.predictions[t]).collect();
            let winner = majority_vote(&votes)?;
            let share = votes.iter().filter(|v| v.is_positive()).count() as f64 / votes.len() as f64;
            // the vote share orders volumes for AUC; its 0.5 cut is the majority
            debug_assert_eq!(share >= 0.5, winner.is_positive());
            vote_scores.push(share);
        }
        let y_test: Vec<Label> = test_idx.iter().map(|&i| labels[i]).collect();
        voting.push(MetricsReport::from_scores(&vote_scores, &y_test)?);
        for (slot, r) in per_slice.iter_mut().zip(results) {
            slot.push(r);
        }
    }

    let slices = selection
        .indices
        .iter()
        .zip(per_slice)
        .map(|(&slice_index, folds)| {
            let reports: Vec<MetricsReport> = folds.iter().map(|f| f.metrics.clone()).collect();
            Ok(SliceBaselineReport {
                slice_index,
                selected_features: folds.into_iter().map(|f| f.selected).collect(),
                report: aggregate_folds(&reports)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SvmBaselineReport {
        config: *cfg,
        discretization: format!("{} equal-frequency bins, tied values share a bin", cfg.bins),
        selection,
        slices,
        voting: aggregate_folds(&voting)?,
    })
}
