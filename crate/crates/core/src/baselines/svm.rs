use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::rng::{rng_from, tags};

/// Column means and standard deviations fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Zero-variance columns keep a unit scale.
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Precondition("cannot standardize an empty matrix".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty").to_vec();
        let std = x
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|&s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> ndarray::Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-2,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
}

impl LinearSvmModel {
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        x.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Label {
        if self.decision(x) >= 0.0 {
            Label::Glaucoma
        } else {
            Label::Normal
        }
    }
}

fn sign(l: Label) -> f64 {
    if l.is_positive() {
        1.0
    } else {
        -1.0
    }
}

/// `λ/2 ‖w‖² + mean hinge loss`; the bias is not regularized.
pub fn svm_objective(model: &LinearSvmModel, x: ArrayView2<f64>, y: &[Label]) -> f64 {
    let reg = 0.5 * model.lambda * model.w.iter().map(|w| w * w).sum::<f64>();
    let hinge: f64 = x
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, &l)| (1.0 - sign(l) * model.decision(row)).max(0.0))
        .sum();
    reg + hinge / y.len() as f64
}

/// One stochastic subgradient step at iteration `t` (1-based) with step
/// size 1/(λt), followed by projection of `w` onto the ball of radius
/// 1/√λ.
pub fn pegasos_step(w: &mut [f64], b: &mut f64, x: ArrayView1<f64>, y: Label, t: u64, lambda: f64) {
    let eta = 1.0 / (lambda * t as f64);
    let ys = sign(y);
    let margin = ys * (x.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + *b);
    let shrink = 1.0 - eta * lambda;
    for wi in w.iter_mut() {
        *wi *= shrink;
    }
    if margin < 1.0 {
        for (wi, xi) in w.iter_mut().zip(x) {
            *wi += eta * ys * xi;
        }
        *b += eta * ys;
    }
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = 1.0 / lambda.sqrt();
    if norm > radius {
        let s = radius / norm;
        w.iter_mut().for_each(|v| *v *= s);
    }
}

/// Seeded Pegasos over `epochs` shuffled passes. Returns the average of all
/// iterates.
pub fn train_linear_svm(x: ArrayView2<f64>, y: &[Label], cfg: &SvmConfig) -> Result<LinearSvmModel> {
    let (n, e) = x.dim();
    if n != y.len() {
        return Err(Error::ShapeMismatch(format!("{n} rows but {} labels", y.len())));
    }
    if !y.iter().any(|l| l.is_positive()) || y.iter().all(|l| l.is_positive()) {
        return Err(Error::Precondition("SVM training needs both classes".into()));
    }
    if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
        return Err(Error::InvalidArgument("SVM needs lambda > 0 and epochs >= 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVM input contains non-finite values".into()));
    }
    let mut rng = rng_from(cfg.seed, tags::SVM);
    let mut w = vec![0.0; e];
    let mut b = 0.0;
    let mut w_avg = Array1::<f64>::zeros(e);
    let mut b_avg = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            pegasos_step(&mut w, &mut b, x.row(i), y[i], t, cfg.lambda);
            let k = 1.0 / t as f64;
            for (a, v) in w_avg.iter_mut().zip(&w) {
                *a += (v - *a) * k;
            }
            b_avg += (b - b_avg) * k;
        }
    }
    Ok(LinearSvmModel {
        w: w_avg.to_vec(),
        b: b_avg,
        lambda: cfg.lambda,
    })
}
