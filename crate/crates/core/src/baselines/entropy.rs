use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::VolumeRecord;
use crate::error::{Error, Result};

fn histogram_entropy(counts: &[u64; 256], n: u64) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / n;
            -q * q.log2()
        })
        .sum()
}

/// Shannon entropy in bits of the 256-bin histogram of an 8-bit slice.
pub fn slice_entropy(slice: ArrayView2<u8>) -> f64 {
    let mut counts = [0u64; 256];
    for &v in slice {
        counts[v as usize] += 1;
    }
    histogram_entropy(&counts, slice.len() as u64)
}

/// Entropy of a real-valued slice after mapping its range onto 256 uniform
/// bins. A constant slice has zero entropy.
pub fn slice_entropy_real(slice: ArrayView2<f64>) -> Result<f64> {
    if slice.is_empty() {
        return Err(Error::InvalidArgument("empty slice".into()));
    }
    let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::NonFinite("slice contains non-finite values".into()));
    }
    if lo == hi {
        return Ok(0.0);
    }
    let mut counts = [0u64; 256];
    for &v in slice {
        let bin = (((v - lo) / (hi - lo)) * 256.0).floor() as usize;
        counts[bin.min(255)] += 1;
    }
    Ok(histogram_entropy(&counts, slice.len() as u64))
}

/// Five 1-based slice indices: the center and the four slices whose entropy
/// is closest to the center's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSelection {
    /// Ascending.
    pub indices: Vec<usize>,
    pub entropies: Vec<f64>,
    pub center_index: usize,
}

pub const SELECTED_SLICES: usize = 5;
pub const DEFAULT_CENTER: usize = 32;

/// Selection from a per-slice entropy profile; ties in distance go to the
/// lower index.
pub fn select_from_entropies(entropies: &[f64], center: usize) -> Result<SliceSelection> {
    let d = entropies.len();
    if d < SELECTED_SLICES {
        return Err(Error::Precondition(format!(
            "slice selection needs at least {SELECTED_SLICES} slices, got {d}"
        )));
    }
    if center == 0 || center > d {
        return Err(Error::InvalidArgument(format!("center slice {center} outside 1..={d}")));
    }
    let ec = entropies[center - 1];
    let mut others: Vec<usize> = (1..=d).filter(|&i| i != center).collect();
    others.sort_by(|&a, &b| {
        (entropies[a - 1] - ec)
            .abs()
            .total_cmp(&(entropies[b - 1] - ec).abs())
            .then(a.cmp(&b))
    });
    let mut indices: Vec<usize> = others[..SELECTED_SLICES - 1].to_vec();
    indices.push(center);
    indices.sort_unstable();
    Ok(SliceSelection {
        indices,
        entropies: entropies.to_vec(),
        center_index: center,
    })
}

pub fn volume_entropies(volume: &VolumeRecord) -> Result<Vec<f64>> {
    if !volume.is_loaded() {
        return Err(Error::Precondition(format!("voxels of `{}` not loaded", volume.volume_id)));
    }
    Ok((0..volume.depth()).map(|i| slice_entropy(volume.slice(i))).collect())
}

pub fn select_slices(volume: &VolumeRecord, center: usize) -> Result<SliceSelection> {
    select_from_entropies(&volume_entropies(volume)?, center)
}

/// One selection for a whole dataset from its mean entropy profile. Uses
/// no labels.
pub fn select_slices_dataset(records: &[VolumeRecord], center: usize) -> Result<SliceSelection> {
    let first = records
        .first()
        .ok_or_else(|| Error::Precondition("no volumes to select slices from".into()))?;
    let d = first.depth();
    let mut mean = vec![0.0; d];
    for r in records {
        if r.depth() != d {
            return Err(Error::ShapeMismatch(format!(
                "`{}` has {} slices, expected {d}",
                r.volume_id,
                r.depth()
            )));
        }
        for (m, e) in mean.iter_mut().zip(volume_entropies(r)?) {
            *m += e;
        }
    }
    mean.iter_mut().for_each(|m| *m /= records.len() as f64);
    select_from_entropies(&mean, center)
}
