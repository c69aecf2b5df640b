//! Minibatch training and evaluation shared by base training and
//! fine-tuning.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::PruneError;
use crate::harness::Dataset;
use crate::netzoo::Network;
use crate::seeding;
use crate::tensorcore::{forward, predict, sgd_step, OptimizerState};

/// Momentum-SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl SgdConfig {
    /// From-scratch training default.
    pub fn training() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
        }
    }

    /// Fine-tuning default; same step size as training.
    pub fn finetune() -> Self {
        Self::training()
    }
}

/// Shuffled passes over `0..len`, reshuffling at every epoch boundary.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    order: Vec<usize>,
    at: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut rng = seeding::rng(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { order, at: 0, rng }
    }

    /// Next `size` indices; a batch never straddles two epochs, so the tail
    /// of an epoch shorter than `size` is dropped.
    pub fn next_batch(&mut self, size: usize) -> &[usize] {
        let size = size.min(self.order.len());
        if self.at + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.at = 0;
        }
        let s = &self.order[self.at..self.at + size];
        self.at += size;
        s
    }

    /// Batches per full pass.
    pub fn batches_per_epoch(&self, size: usize) -> usize {
        (self.order.len() / size.max(1)).max(1)
    }
}

/// Runs `updates` SGD steps. Velocities start at zero, since pruning changes
/// every affected parameter shape.
pub fn train_updates(
    net: &mut Network,
    data: &Dataset,
    sampler: &mut EpochSampler,
    updates: usize,
    sgd: &SgdConfig,
) -> Result<(), PruneError> {
    if updates == 0 {
        return Ok(());
    }
    let mut state = OptimizerState::new(&net.param_tensors(), sgd.learning_rate, sgd.momentum)?;
    for _ in 0..updates {
        let batch = data.batch(sampler.next_batch(sgd.batch_size));
        let grads = forward(net, &batch.images, &batch.labels)?.backward()?;
        let flat = grads.flat();
        sgd_step(&mut net.param_tensors_mut(), &flat, &mut state)?;
    }
    Ok(())
}

const EVAL_CHUNK: usize = 100;

/// Fraction of correctly classified examples (argmax, ties to the lowest
/// class index).
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64, PruneError> {
    if data.is_empty() {
        return Err(PruneError::EmptyStream);
    }
    let mut correct = 0usize;
    for batch in data.chunks(EVAL_CHUNK) {
        let logits = predict(net, &batch.images)?;
        let classes = logits.shape()[1];
        for (row, &label) in logits.data().chunks_exact(classes).zip(&batch.labels) {
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            correct += usize::from(best == label);
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean cross-entropy over a dataset.
pub fn mean_loss(net: &Network, data: &Dataset) -> Result<f64, PruneError> {
    if data.is_empty() {
        return Err(PruneError::EmptyStream);
    }
    let mut total = 0.0;
    for batch in data.chunks(EVAL_CHUNK) {
        total += forward(net, &batch.images, &batch.labels)?.loss * batch.labels.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Early-stopping budget for training from scratch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    pub sgd: SgdConfig,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::training(),
            patience: 5,
            max_epochs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub score_accuracy: f64,
}

/// Trains epoch by epoch, scoring on `score` after each epoch, and returns
/// the weights of the best-scoring epoch once `patience` epochs pass without
/// improvement.
pub fn train_to_plateau(
    net: &Network,
    train: &Dataset,
    score: &Dataset,
    cfg: &PlateauConfig,
    seed: u64,
) -> Result<(Network, TrainReport), PruneError> {
    let mut sampler = EpochSampler::new(train.len(), seed);
    let per_epoch = sampler.batches_per_epoch(cfg.sgd.batch_size);
    let mut cur = net.clone();
    let mut best = (cur.clone(), accuracy(&cur, score)?, 0);
    let mut stale = 0;
    let mut epochs = 0;
    // Velocity persists across epochs of one training run.
    let mut state = OptimizerState::new(&cur.param_tensors(), cfg.sgd.learning_rate, cfg.sgd.momentum)?;
    while epochs < cfg.max_epochs && stale < cfg.patience {
        for _ in 0..per_epoch {
            let batch = train.batch(sampler.next_batch(cfg.sgd.batch_size));
            let grads = forward(&cur, &batch.images, &batch.labels)?.backward()?;
            sgd_step(&mut cur.param_tensors_mut(), &grads.flat(), &mut state)?;
        }
        epochs += 1;
        let acc = accuracy(&cur, score)?;
        if acc > best.1 {
            best = (cur.clone(), acc, epochs);
            stale = 0;
        } else {
            stale += 1;
        }
    }
    let (net, score_accuracy, best_epoch) = best;
    Ok((
        net,
        TrainReport {
            epochs,
            best_epoch,
            score_accuracy,
        },
    ))
}
