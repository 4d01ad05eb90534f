use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};
use crate::rng::{rng_from, tags, Rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<usize>>,
    pub batch_size: usize,
    pub seed: u64,
}

/// Endless stream over a class pool: shuffled passes, reshuffled whenever a
/// pass is exhausted.
struct Cycler {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(pool: Vec<usize>, rng: &mut Rng) -> Self {
        let mut order = pool.clone();
        order.shuffle(rng);
        Cycler {
            pool,
            order,
            pos: 0,
        }
    }

    fn next(&mut self, rng: &mut Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.clone_from(&self.pool);
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// One epoch of class-balanced batches over `train_indices`.
///
/// Every batch holds ⌈b/2⌉ positives and ⌊b/2⌋ negatives. The epoch is long
/// enough for the larger class to be seen once; the smaller class is
/// resampled in reshuffled passes to fill its quota.
pub fn balanced_batches(
    labels: &[Label],
    train_indices: &[usize],
    batch_size: usize,
    seed: u64,
) -> Result<BatchPlan> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "balanced batches need batch_size >= 2, got {batch_size}"
        )));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &i in train_indices {
        let label = labels.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("train index {i} out of range ({})", labels.len()))
        })?;
        if label.is_positive() {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Precondition(format!(
            "both classes must be present in the training subset ({} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }

    let q_pos = batch_size.div_ceil(2);
    let q_neg = batch_size / 2;
    let n_batches = pos.len().div_ceil(q_pos).max(neg.len().div_ceil(q_neg));

    let mut rng = rng_from(seed, tags::BATCHES);
    let mut pos = Cycler::new(pos, &mut rng);
    let mut neg = Cycler::new(neg, &mut rng);
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut batch: Vec<usize> = (0..q_pos).map(|_| pos.next(&mut rng)).collect();
        batch.extend((0..q_neg).map(|_| neg.next(&mut rng)));
        batch.shuffle(&mut rng);
        batches.push(batch);
    }
    Ok(BatchPlan {
        batches,
        batch_size,
        seed,
    })
}
