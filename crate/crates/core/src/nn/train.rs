//! Mini-batch SGD.
//!
//! Each mini-batch is cut into fixed chunks of [`CHUNK`] samples. A chunk's
//! dropout masks come from its own derived seed and the chunk gradients are
//! summed in chunk order, so the update does not depend on how many worker
//! threads ran the chunks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::{derive_seed, try_map_indexed};

use super::model::{Examples, Gradients, Model};
use super::Real;

pub const CHUNK: usize = 50;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, batch_size: 500, learning_rate: 0.005, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches (dropout active).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Trains `model` in place and returns the per-epoch history.
pub fn train(
    model: &mut Model,
    train_set: &Examples,
    validation: Option<&Examples>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::config(format!(
            "batch size {} and learning rate {} must be positive",
            cfg.batch_size, cfg.learning_rate
        )));
    }
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let seed = derive_seed(cfg.seed, &[DROPOUT_STREAM, epoch as u64, b as u64]);
            let (loss, grads) = batch_gradients(model, train_set, batch, seed)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss;
            model.sgd_step(&grads, cfg.learning_rate as Real)?;
        }
        let train_loss = loss_sum / n as f64;
        let (val_loss, val_accuracy) = match validation {
            Some(v) if !v.is_empty() => {
                let (loss, correct) = evaluate_chunked(model, v)?;
                (Some(loss), correct.map(|c| c as f64 / v.len() as f64))
            }
            _ => (None, None),
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|l| !l.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochStats { epoch, train_loss, val_loss, val_accuracy });
    }
    if let Some(last) = history.last() {
        model.meta.epochs += history.len();
        model.meta.final_train_loss = Some(last.train_loss);
        model.meta.final_val_loss = last.val_loss;
    }
    Ok(history)
}

/// Summed loss of one mini-batch and the batch-mean gradient.
fn batch_gradients(model: &Model, data: &Examples, batch: &[usize], seed: u64) -> Result<(f64, Gradients)> {
    let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
    let parts = try_map_indexed(chunks.len(), |c| {
        let ex = data.gather(chunks[c]);
        model.loss_and_gradients(&ex, Some(derive_seed(seed, &[c as u64])))
    })?;
    let mut total = Gradients::zeros_like(model);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    total.scale(1.0 / batch.len() as Real);
    Ok((loss, total))
}

/// Mean inference-mode loss and the number of correct classifications.
pub fn evaluate_chunked(model: &Model, data: &Examples) -> Result<(f64, Option<usize>)> {
    let n = data.len();
    let chunks = n.div_ceil(CHUNK);
    let parts = try_map_indexed(chunks, |c| {
        let idx: Vec<usize> = (c * CHUNK..((c + 1) * CHUNK).min(n)).collect();
        model.evaluate(&data.gather(&idx))
    })?;
    let mut loss = 0.0;
    let mut correct: Option<usize> = None;
    for (l, c) in parts {
        loss += l;
        if let Some(c) = c {
            correct = Some(correct.unwrap_or(0) + c);
        }
    }
    Ok((loss / n as f64, correct))
}
