//! Seeded SGD trainer with validation-based early stopping.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::autodiff::{forward, loss_and_grad_with_head, CrossEntropyHead, LossHead};
use super::data::{Batch, Dataset};
use super::model::Network;
use super::params::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_patience: Option<usize>,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be > 0".into()));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        Ok(())
    }

    /// Reference settings: SGD, lr 1e-4, weight decay 1e-4, batch 128.
    /// Toy problems converge much faster with a larger step; tests and the
    /// CLI pass their own schedules.
    pub fn reference() -> Self {
        TrainSchedule {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 100,
            early_stop_patience: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// SGD training with the cross-entropy objective. Returns the parameters of
/// the best validation epoch and the epoch history.
pub fn train(
    net: &Network,
    init: ParamVector,
    train_data: &Dataset,
    val_data: &Dataset,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(ParamVector, Vec<EpochStat>)> {
    train_with_head(net, init, train_data, val_data, schedule, seed, |b| {
        CrossEntropyHead {
            labels: b.labels.clone(),
        }
    })
}

/// The shared training loop: the caller supplies the per-batch loss head
/// (plain cross-entropy, distillation, ...). The RNG stream depends only on
/// `(seed, epoch structure)`, so two runs differing only in the head see the
/// same batch order.
pub fn train_with_head<H: LossHead>(
    net: &Network,
    init: ParamVector,
    train_data: &Dataset,
    val_data: &Dataset,
    schedule: &TrainSchedule,
    seed: u64,
    make_head: impl Fn(&Batch) -> H,
) -> Result<(ParamVector, Vec<EpochStat>)> {
    schedule.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = init;
    if schedule.epochs == 0 {
        return Ok((params, Vec::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut epochs_since_improvement = 0usize;
    let n = train_data.len();
    let mut idx: Vec<usize> = (0..n).collect();

    for epoch in 1..=schedule.epochs {
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in idx.chunks(schedule.batch_size).enumerate() {
            let batch = train_data.batch(chunk);
            let head = make_head(&batch);
            let (loss, g) =
                loss_and_grad_with_head(net, &params, &batch.inputs, batch.len(), &head)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let lr = schedule.learning_rate;
            let wd = schedule.weight_decay;
            for (p, gi) in params.values_mut().iter_mut().zip(g.values()) {
                *p -= lr * (gi + wd * *p);
            }
            loss_sum += loss;
            batches += 1;
        }
        let val_accuracy = evaluate(net, &params, val_data)?;
        history.push(EpochStat {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_accuracy,
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best_params = params.clone();
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if let Some(patience) = schedule.early_stop_patience {
                if epochs_since_improvement >= patience {
                    break;
                }
            }
        }
    }
    Ok((best_params, history))
}

/// Top-1 accuracy (argmax of logits, first index on ties).
pub fn evaluate(net: &Network, params: &ParamVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let batch = data.as_batch();
    let (logits, _) = forward(net, params, &batch)?;
    let k = data.classes;
    let mut correct = 0usize;
    for (s, &label) in data.labels.iter().enumerate() {
        let row = &logits[s * k..(s + 1) * k];
        let mut arg = 0;
        for j in 1..k {
            if row[j] > row[arg] {
                arg = j;
            }
        }
        if arg == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
