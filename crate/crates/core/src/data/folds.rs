use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Label, VolumeRecord};
use crate::error::{Error, Result};
use crate::rng::{rng_from, tags};

/// Fraction of non-test subjects held out for validation in each fold.
const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

/// Subject ids per subset, each list sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Fold {
    pub fn subjects(&self, subset: Subset) -> &[String] {
        match subset {
            Subset::Train => &self.train,
            Subset::Validation => &self.validation,
            Subset::Test => &self.test,
        }
    }

    /// Record indices whose subject belongs to `subset`, in record order.
    pub fn indices(&self, records: &[VolumeRecord], subset: Subset) -> Vec<usize> {
        let wanted: HashSet<&str> = self.subjects(subset).iter().map(String::as_str).collect();
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| wanted.contains(r.subject_id.as_str()))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Majority label per subject; ties go to the positive class.
fn subject_labels(records: &[VolumeRecord]) -> BTreeMap<&str, Label> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = counts.entry(r.subject_id.as_str()).or_default();
        match r.label {
            Label::Normal => e.0 += 1,
            Label::Glaucoma => e.1 += 1,
        }
    }
    counts
        .into_iter()
        .map(|(s, (neg, pos))| (s, if pos >= neg { Label::Glaucoma } else { Label::Normal }))
        .collect()
}

/// Subject-level stratified k-fold plan. Each fold's non-test subjects are
/// split 90/10 into train/validation, again stratified by subject label.
pub fn make_fold_plan(records: &[VolumeRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let labels = subject_labels(records);
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (&s, &l) in &labels {
        by_class[l.as_u8() as usize].push(s);
    }
    for (class, subjects) in by_class.iter().enumerate() {
        if subjects.len() < k {
            return Err(Error::Precondition(format!(
                "too few subjects: class {class} has {} subjects, need at least k = {k}",
                subjects.len()
            )));
        }
    }

    let mut rng = rng_from(seed, tags::FOLDS);
    let mut test_of: Vec<Vec<Vec<&str>>> = vec![vec![Vec::new(); 2]; k];
    let mut cursor = 0;
    // positives first, then negatives continue the round-robin
    for class in [1usize, 0] {
        let mut subjects = by_class[class].clone();
        subjects.shuffle(&mut rng);
        for s in subjects {
            test_of[cursor % k][class].push(s);
            cursor += 1;
        }
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for class in [1usize, 0] {
            let held: HashSet<&str> = test_of[f][class].iter().copied().collect();
            let mut rest: Vec<&str> = by_class[class]
                .iter()
                .copied()
                .filter(|s| !held.contains(s))
                .collect();
            rest.shuffle(&mut rng);
            let n = rest.len();
            let n_val = if n >= 2 {
                ((n as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, n - 1)
            } else {
                0
            };
            validation.extend(rest[..n_val].iter().map(|s| s.to_string()));
            train.extend(rest[n_val..].iter().map(|s| s.to_string()));
            test.extend(test_of[f][class].iter().map(|s| s.to_string()));
        }
        train.sort();
        validation.sort();
        test.sort();
        folds.push(Fold {
            train,
            validation,
            test,
        });
    }
    Ok(FoldPlan { k, seed, folds })
}
