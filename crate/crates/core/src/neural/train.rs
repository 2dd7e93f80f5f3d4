//! Mini-batch training with adaptive moment estimation.
//!
//! Parameters are rounded to f32 precision after every update so the
//! checkpoint blob (little-endian f32) round-trips without loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sampler::TrainingExample;

use super::net::{forward, loss_and_gradients, rank_row};
use super::{ModelConfig, NetworkParams, NeuralError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_top1: f64,
    pub val_top5: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub params: NetworkParams,
    pub log: Vec<EpochMetrics>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(
        &mut self,
        params: &mut Vec<f64>,
        grads: &[f64],
        mask: &[f64],
        cfg: &TrainConfig,
    ) {
        self.t += 1;
        let b1 = cfg.beta1;
        let b2 = cfg.beta2;
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        for idx in 0..params.len() {
            let g = grads[idx] * mask[idx];
            self.m[idx] = b1 * self.m[idx] + (1.0 - b1) * g;
            self.v[idx] = b2 * self.v[idx] + (1.0 - b2) * g * g;
            let m_hat = self.m[idx] / bias1;
            let v_hat = self.v[idx] / bias2;
            params[idx] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            // keep values exactly representable in f32
            params[idx] = params[idx] as f32 as f64;
        }
    }
}

/// Fraction of examples whose target lands in the top 1 / top 5 ranks.
pub(super) fn validation_accuracy(
    params: &NetworkParams,
    config: &ModelConfig,
    examples: &[TrainingExample],
    batch_size: usize,
) -> Result<(f64, f64), NeuralError> {
    if examples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut hits1 = 0usize;
    let mut hits5 = 0usize;
    for chunk in examples.chunks(batch_size) {
        let probs = forward(params, config, chunk)?;
        for (b, e) in chunk.iter().enumerate() {
            let ranked = rank_row(&probs.row(b).to_owned(), config.pad_id(), 5);
            if ranked.first() == Some(&e.target) {
                hits1 += 1;
            }
            if ranked.contains(&e.target) {
                hits5 += 1;
            }
        }
    }
    let n = examples.len() as f64;
    Ok((hits1 as f64 / n, hits5 as f64 / n))
}

/// Runs `train_cfg.epochs` of mini-batch gradient descent. After each epoch
/// the log records mean train loss and validation top-1/top-5 accuracy.
/// Deterministic under a fixed seed. On divergence the error reports the
/// epoch; the caller still holds the last finished epoch via the log.
pub fn train(
    params: NetworkParams,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[TrainingExample],
    validation_set: &[TrainingExample],
) -> Result<TrainOutput, NeuralError> {
    config.validate()?;
    let mut params = params;
    let mut log = Vec::new();
    if train_cfg.epochs == 0 {
        return Ok(TrainOutput { params, log });
    }
    let mask = params.trainable_mask(config.embeddings_frozen);
    let mut flat = params.flatten();
    let mut opt = Adam::new(flat.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch: Vec<TrainingExample> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, grads) = match loss_and_gradients(&params, config, &batch) {
                Ok(r) => r,
                Err(NeuralError::NonFiniteLoss(_)) => {
                    return Err(NeuralError::Diverged { epoch });
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(NeuralError::Diverged { epoch });
            }
            epoch_loss += loss;
            batches += 1;
            let gflat = grads.flatten();
            opt.step(&mut flat, &gflat, &mask, train_cfg);
            params.assign_from_flat(&flat);
        }
        let (top1, top5) =
            validation_accuracy(&params, config, validation_set, train_cfg.batch_size)?;
        log.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_top1: top1,
            val_top5: top5,
        });
    }
    Ok(TrainOutput { params, log })
}
