//! Focal loss, Adam with step decay, early stopping and the training loop
//! over precomputed feature sequences.

mod focal;
mod optim;

pub use focal::{focal_loss, FocalConfig, PROB_CLAMP};
pub use optim::{adam_step, lr_at, AdamState, EarlyStopper, OptimConfig, StopVerdict};

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{balanced_batches, Label};
use crate::error::{Error, Result};
use crate::eval::{basic_metrics, confusion, DECISION_THRESHOLD};
use crate::model::{
    head_backward, head_forward, predict, AnyHead, DropoutMode, HeadParams, RecurrentCell,
};
use crate::rng::derive_seed;

/// Loss and optimizer settings, serialized with the field names above.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub focal: FocalConfig,
    #[serde(default)]
    pub optim: OptimConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.focal.validate()?;
        self.optim.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation loss of the initial parameters, before any update.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_f1,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_f1, e.lr
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<C> {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: HeadParams<C>,
    pub history: TrainHistory,
}

/// Mean focal loss over `indices` in evaluation mode, plus the probabilities.
pub fn evaluate_loss<C: RecurrentCell>(
    params: &HeadParams<C>,
    sequences: &[Array2<f64>],
    labels: &[Label],
    indices: &[usize],
    focal: &FocalConfig,
) -> Result<(f64, Vec<f64>)> {
    let probs: Vec<f64> = indices
        .par_iter()
        .map(|&i| predict(sequences[i].view(), params))
        .collect::<Result<_>>()?;
    let total: f64 = indices
        .iter()
        .zip(&probs)
        .map(|(&i, &p)| focal_loss(p, labels[i], focal).0)
        .sum();
    Ok((total / indices.len() as f64, probs))
}

fn check_indices(name: &str, indices: &[usize], n: usize) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Precondition(format!("{name} subset is empty")));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!(
            "{name} index {i} out of range for {n} sequences"
        )));
    }
    Ok(())
}

/// Trains `init` on the `train` items with class-balanced batches, checking
/// the validation loss after every epoch and keeping the best parameters.
///
/// Per-item gradients may be computed in parallel; they are summed in batch
/// order so the result does not depend on the thread count.
pub fn train_model<C: RecurrentCell>(
    sequences: &[Array2<f64>],
    labels: &[Label],
    train: &[usize],
    validation: &[usize],
    init: HeadParams<C>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<C>> {
    cfg.validate()?;
    init.validate()?;
    if sequences.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} sequences but {} labels",
            sequences.len(),
            labels.len()
        )));
    }
    check_indices("train", train, sequences.len())?;
    check_indices("validation", validation, sequences.len())?;
    let width = init.shape().input_dim;
    if let Some(bad) = train.iter().chain(validation).find(|&&i| sequences[i].ncols() != width) {
        return Err(Error::ShapeMismatch(format!(
            "sequence {bad} has width {}, head expects {width}",
            sequences[*bad].ncols()
        )));
    }

    let (focal, optim) = (&cfg.focal, &cfg.optim);
    let mut params = init;
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut stopper = EarlyStopper::new(optim.patience);
    let (initial_val_loss, _) = evaluate_loss(&params, sequences, labels, validation, focal)?;
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut step: u64 = 0;

    for epoch in 0..optim.max_epochs {
        let lr = lr_at(epoch, optim);
        let plan = balanced_batches(labels, train, optim.batch_size, derive_seed(optim.seed, epoch as u64))?;
        let mut batch_losses = Vec::with_capacity(plan.batches.len());
        for batch in &plan.batches {
            step += 1;
            let step_seed = derive_seed(optim.seed ^ 0xD50F_0000_0000_0000, step);
            let scale = 1.0 / batch.len() as f64;
            let per_item: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let mode = DropoutMode::Train {
                        seed: derive_seed(step_seed, pos as u64),
                    };
                    let (p, trace) = head_forward(sequences[i].view(), &params, &mode)?;
                    let (loss, dl_dp) = focal_loss(p, labels[i], focal);
                    let grads = head_backward(&trace, dl_dp * scale, &params)?;
                    Ok((loss, grads.params.flatten()))
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; flat.len()];
            let mut loss = 0.0;
            for (l, g) in &per_item {
                loss += l;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let loss = loss * scale;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, step {step}: batch loss {loss}, items {batch:?}"
                )));
            }
            batch_losses.push(loss);
            adam_step(&mut flat, &grad, &mut adam, step, lr, optim)?;
            params.assign_flat(&flat)?;
        }
        let train_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;

        let (val_loss, probs) = evaluate_loss(&params, sequences, labels, validation, focal)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}: validation loss {val_loss}")));
        }
        let val_labels: Vec<Label> = validation.iter().map(|&i| labels[i]).collect();
        let val_f1 = basic_metrics(&confusion(&probs, &val_labels, DECISION_THRESHOLD)?).f1;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_f1,
            lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} f1 {val_f1:.3}");
        match stopper.observe(epoch, val_loss) {
            StopVerdict::Improved => best = params.clone(),
            StopVerdict::Stalled => {}
            StopVerdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best,
        history: TrainHistory {
            initial_val_loss,
            epochs,
            best_epoch: stopper.best_epoch().expect("at least one epoch ran"),
            best_val_loss: stopper.best(),
            stopped_early,
        },
    })
}

/// [`train_model`] for either cell type.
pub fn train_any(
    sequences: &[Array2<f64>],
    labels: &[Label],
    train: &[usize],
    validation: &[usize],
    init: AnyHead,
    cfg: &TrainConfig,
) -> Result<(AnyHead, TrainHistory)> {
    Ok(match init {
        AnyHead::Gru(p) => {
            let out = train_model(sequences, labels, train, validation, p, cfg)?;
            (AnyHead::Gru(out.params), out.history)
        }
        AnyHead::Lstm(p) => {
            let out = train_model(sequences, labels, train, validation, p, cfg)?;
            (AnyHead::Lstm(out.params), out.history)
        }
    })
}
