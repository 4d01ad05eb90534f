use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Scores at or above this value are predicted positive.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn n_pos(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn n_neg(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn add(&self, other: &Self) -> Self {
        ConfusionCounts {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }

    /// Rows are the actual class (positive, negative); columns the predicted
    /// class in the same order. Each row is normalized by its class total;
    /// an empty class gives a zero row.
    pub fn percent(&self) -> [[f64; 2]; 2] {
        let row = |a: u64, b: u64| {
            let n = (a + b) as f64;
            if n == 0.0 {
                [0.0, 0.0]
            } else {
                [a as f64 / n, b as f64 / n]
            }
        };
        [row(self.tp, self.fn_), row(self.fp, self.tn)]
    }
}

pub fn confusion(scores: &[f64], labels: &[Label], threshold: f64) -> Result<ConfusionCounts> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Precondition("no predictions to count".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l.is_positive()) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Threshold metrics. A ratio with a zero denominator is reported as 0 and
/// its name is listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicMetrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub prc: f64,
    pub f1: f64,
    pub undefined: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

pub fn basic_metrics(c: &ConfusionCounts) -> BasicMetrics {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let mut undefined = Vec::new();
    let acc = ratio(tp + tn, tp + tn + fp + fn_, "acc", &mut undefined);
    let sen = ratio(tp, tp + fn_, "sen", &mut undefined);
    let spe = ratio(tn, tn + fp, "spe", &mut undefined);
    let prc = ratio(tp, tp + fp, "prc", &mut undefined);
    let f1 = if undefined.iter().any(|n| n == "sen" || n == "prc") {
        undefined.push("f1".into());
        0.0
    } else {
        ratio(2.0 * sen * prc, sen + prc, "f1", &mut undefined)
    };
    BasicMetrics {
        acc,
        sen,
        spe,
        prc,
        f1,
        undefined,
    }
}

/// Matthews correlation coefficient; `(0, true)` when any marginal is zero.
pub fn mcc(c: &ConfusionCounts) -> (f64, bool) {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return (0.0, true);
    }
    ((tp * tn - fp * fn_) / den.sqrt(), false)
}

/// Rank-statistic AUC: the fraction of positive/negative pairs ordered
/// correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s} cannot be ranked")));
    }
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Precondition("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tied groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k].is_positive() {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Every metric for one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub auc: f64,
    pub sen: f64,
    pub spe: f64,
    pub prc: f64,
    pub f1: f64,
    pub mcc: f64,
    pub counts: ConfusionCounts,
    /// Actual (positive, negative) by predicted (positive, negative).
    pub confusion_percent: [[f64; 2]; 2],
    pub n_pos: u64,
    pub n_neg: u64,
    pub undefined: Vec<String>,
}

impl MetricsReport {
    pub fn from_scores(scores: &[f64], labels: &[Label]) -> Result<Self> {
        let counts = confusion(scores, labels, DECISION_THRESHOLD)?;
        let basic = basic_metrics(&counts);
        let (m, m_undef) = mcc(&counts);
        let mut undefined = basic.undefined;
        if m_undef {
            undefined.push("mcc".into());
        }
        let a = match auc(scores, labels) {
            Ok(a) => a,
            Err(Error::Precondition(_)) => {
                undefined.push("auc".into());
                0.0
            }
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            acc: basic.acc,
            auc: a,
            sen: basic.sen,
            spe: basic.spe,
            prc: basic.prc,
            f1: basic.f1,
            mcc: m,
            counts,
            confusion_percent: counts.percent(),
            n_pos: counts.n_pos(),
            n_neg: counts.n_neg(),
            undefined,
        })
    }

    /// `(name, value)` for the seven scalar metrics, in table order.
    pub fn scalars(&self) -> [(&'static str, f64); 7] {
        [
            ("acc", self.acc),
            ("auc", self.auc),
            ("sen", self.sen),
            ("spe", self.spe),
            ("prc", self.prc),
            ("f1", self.f1),
            ("mcc", self.mcc),
        ]
    }
}
