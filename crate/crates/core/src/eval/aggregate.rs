use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::metrics::{ConfusionCounts, MetricsReport};
use crate::error::{Error, Result};

/// One value per scalar metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: f64,
    pub auc: f64,
    pub sen: f64,
    pub spe: f64,
    pub prc: f64,
    pub f1: f64,
    pub mcc: f64,
}

impl MetricSummary {
    fn from_fn(mut f: impl FnMut(usize) -> f64) -> Self {
        MetricSummary {
            acc: f(0),
            auc: f(1),
            sen: f(2),
            spe: f(3),
            prc: f(4),
            f1: f(5),
            mcc: f(6),
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [self.acc, self.auc, self.sen, self.spe, self.prc, self.f1, self.mcc]
    }
}

pub const METRIC_NAMES: [&str; 7] = ["ACC", "AUC", "SEN", "SPE", "PRC", "F1", "MCC"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub k: usize,
    /// How `halfwidth95` was computed.
    pub interval: String,
    pub t_multiplier: f64,
    pub per_fold: Vec<MetricsReport>,
    pub mean: MetricSummary,
    pub halfwidth95: MetricSummary,
    pub pooled_counts: ConfusionCounts,
    pub pooled_confusion_percent: [[f64; 2]; 2],
}

/// Two-sided 95% Student-t multiplier with `dof` degrees of freedom.
pub fn t_multiplier_95(dof: usize) -> Result<f64> {
    let t = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| Error::InvalidArgument(format!("t distribution with {dof} dof: {e}")))?;
    Ok(t.inverse_cdf(0.975))
}

/// Fold means with `t(0.975, k−1) · sd / √k` half-widths, sd being the
/// sample standard deviation across folds.
pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<CrossValReport> {
    let k = reports.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "aggregation needs at least 2 folds, got {k}"
        )));
    }
    let t = t_multiplier_95(k - 1)?;
    let columns: Vec<Vec<f64>> = (0..7)
        .map(|m| reports.iter().map(|r| r.scalars()[m].1).collect())
        .collect();
    let kf = k as f64;
    let mean = MetricSummary::from_fn(|m| columns[m].iter().sum::<f64>() / kf);
    let means = mean.values();
    let halfwidth95 = MetricSummary::from_fn(|m| {
        let var = columns[m].iter().map(|v| (v - means[m]).powi(2)).sum::<f64>() / (kf - 1.0);
        t * var.sqrt() / kf.sqrt()
    });
    let pooled_counts = reports
        .iter()
        .fold(ConfusionCounts::default(), |acc, r| acc.add(&r.counts));
    Ok(CrossValReport {
        k,
        interval: format!("95% Student-t, {} dof, multiplier {t:.4}", k - 1),
        t_multiplier: t,
        per_fold: reports.to_vec(),
        mean,
        halfwidth95,
        pooled_counts,
        pooled_confusion_percent: pooled_counts.percent(),
    })
}

impl CrossValReport {
    /// Percent table: one row per fold, then mean ± half-width.
    pub fn to_table(&self) -> String {
        let mut out = format!("{}-fold cross-validation ({})\n", self.k, self.interval);
        out.push_str(&format!("{:<6}", "fold"));
        for n in METRIC_NAMES {
            out.push_str(&format!("{n:>16}"));
        }
        out.push('\n');
        for (i, r) in self.per_fold.iter().enumerate() {
            out.push_str(&format!("{:<6}", i + 1));
            for (_, v) in r.scalars() {
                out.push_str(&format!("{:>16.2}", 100.0 * v));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<6}", "mean"));
        for (m, h) in self.mean.values().iter().zip(self.halfwidth95.values()) {
            out.push_str(&format!("{:>16}", format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * h)));
        }
        out.push('\n');
        let p = self.pooled_confusion_percent;
        out.push_str(&format!(
            "confusion % (rows actual pos/neg, cols predicted pos/neg): [{:.2} {:.2}; {:.2} {:.2}]\n",
            100.0 * p[0][0],
            100.0 * p[0][1],
            100.0 * p[1][0],
            100.0 * p[1][1]
        ));
        out
    }
}
