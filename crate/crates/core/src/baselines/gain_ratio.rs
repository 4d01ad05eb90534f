use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;

fn entropy_of(counts: impl IntoIterator<Item = usize>, n: usize) -> f64 {
    counts
        .into_iter()
        .filter(|&c| c > 0)
        .map(|c| {
            let q = c as f64 / n as f64;
            -q * q.log2()
        })
        .sum()
}

/// Equal-frequency cell of each value: the sorted position scaled onto
/// `bins` cells, with every copy of a value placed in the cell of its first
/// occurrence.
pub fn equal_frequency_cells(feature: &[f64], bins: usize) -> Vec<usize> {
    let n = feature.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| feature[a].total_cmp(&feature[b]).then(a.cmp(&b)));
    let mut cells = vec![0; n];
    let mut current = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank == 0 || feature[i] != feature[order[rank - 1]] {
            current = rank * bins / n;
        }
        cells[i] = current;
    }
    cells
}

/// Information gain of the labels given the binned feature, divided by the
/// split information of the binning. A single cell scores 0.
pub fn gain_ratio(feature: &[f64], labels: &[Label], bins: usize) -> Result<f64> {
    let n = feature.len();
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!("{n} values but {} labels", labels.len())));
    }
    if n < 2 || bins == 0 {
        return Err(Error::Precondition("gain ratio needs n >= 2 and bins >= 1".into()));
    }
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::Precondition("gain ratio needs both classes".into()));
    }
    if feature.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("feature contains NaN".into()));
    }
    let cells = equal_frequency_cells(feature, bins);
    let mut per_cell = vec![(0usize, 0usize); bins];
    for (&c, l) in cells.iter().zip(labels) {
        if l.is_positive() {
            per_cell[c].1 += 1;
        } else {
            per_cell[c].0 += 1;
        }
    }
    let used: Vec<(usize, usize)> = per_cell.into_iter().filter(|&(a, b)| a + b > 0).collect();
    if used.len() < 2 {
        return Ok(0.0);
    }
    let h_y = entropy_of([n_pos, n - n_pos], n);
    let h_y_given: f64 = used
        .iter()
        .map(|&(neg, pos)| (neg + pos) as f64 / n as f64 * entropy_of([neg, pos], neg + pos))
        .sum();
    let split = entropy_of(used.iter().map(|&(a, b)| a + b), n);
    Ok((h_y - h_y_given) / split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRatioRanking {
    pub scores: Vec<f64>,
    /// Highest scores first; equal scores by lower index.
    pub selected: Vec<usize>,
    pub bins: usize,
}

/// Scores every column of `x` and keeps the best `top_k` (at most all).
pub fn rank_features(x: ArrayView2<f64>, labels: &[Label], top_k: usize, bins: usize) -> Result<GainRatioRanking> {
    let scores: Vec<f64> = (0..x.ncols())
        .map(|j| gain_ratio(&x.column(j).to_vec(), labels, bins))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(top_k.min(scores.len()));
    Ok(GainRatioRanking {
        scores,
        selected: order,
        bins,
    })
}
