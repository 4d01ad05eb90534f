use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::features::AttentionStack;

/// Row sums must match 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutMap {
    pub volume_id: String,
    /// 1-based.
    pub slice_index: usize,
    pub rollout: Array2<f64>,
    /// Class-token relevance over the patch grid, min-max scaled to [0, 1].
    pub heatmap: Array2<f64>,
}

fn check_stochastic(m: ArrayView2<f64>, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL || row.iter().any(|&v| !(v >= -STOCHASTIC_TOL)) {
            return Err(Error::Precondition(format!(
                "{what}: row {i} is not stochastic (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// `row_normalize(0.5·A + 0.5·I)`.
pub fn residual_mix(a: ArrayView2<f64>) -> Array2<f64> {
    let t = a.nrows();
    let mut m = a.mapv(|v| 0.5 * v) + Array2::<f64>::eye(t) * 0.5;
    for mut row in m.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    m
}

/// `Ã_L ··· Ã_1` over the given layers, checking that every input layer and
/// every partial product is row-stochastic.
pub fn rollout_product(layers: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = layers
        .first()
        .ok_or_else(|| Error::InvalidArgument("attention stack has no layers".into()))?;
    let t = first.nrows();
    let mut acc = Array2::<f64>::eye(t);
    for (l, a) in layers.iter().enumerate() {
        if a.dim() != (t, t) {
            return Err(Error::ShapeMismatch(format!(
                "layer {l} is {:?}, expected {t}x{t}",
                a.dim()
            )));
        }
        check_stochastic(a.view(), &format!("attention layer {l}"))?;
        acc = residual_mix(a.view()).dot(&acc);
        check_stochastic(acc.view(), &format!("rollout after layer {l}"))?;
    }
    Ok(acc)
}

pub fn attention_rollout(stack: &AttentionStack) -> Result<RolloutMap> {
    let rollout = rollout_product(&stack.layers)?;
    let t = rollout.nrows();
    let grid = ((t.saturating_sub(1)) as f64).sqrt().round() as usize;
    if t < 2 || grid * grid != t - 1 {
        return Err(Error::ShapeMismatch(format!(
            "{t} tokens is not a class token plus a square patch grid"
        )));
    }
    let cls = rollout.row(0);
    let patches = cls.slice(ndarray::s![1..]);
    let (lo, hi) = patches
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let heatmap = Array2::from_shape_fn((grid, grid), |(r, c)| {
        if hi > lo {
            (patches[r * grid + c] - lo) / (hi - lo)
        } else {
            0.0
        }
    });
    Ok(RolloutMap {
        volume_id: stack.volume_id.clone(),
        slice_index: stack.slice_index,
        rollout,
        heatmap,
    })
}
