use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{init_params, latent_attribute_correlations, loss_and_gradients, token_accuracy, LossParts};
use super::{ModelConfig, ModelParams, VaeError};
use crate::corpus::{Dataset, Example};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error("training needs at least two training measures, got {0}")]
    TooFewExamples(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {parts:?}")]
    NonFinite { epoch: usize, step: usize, parts: LossParts },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub reg: f64,
    pub validation_accuracy: f64,
    /// Validation Spearman correlation of `mu[r]` against attribute `r`
    /// for each regularised dimension, `None` when undefined.
    pub spearman: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochReport> {
        self.epochs.last()
    }
}

pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: ModelParams,
    v: ModelParams,
    t: i32,
}

impl Adam {
    pub fn new(model: &ModelConfig, training: &TrainingConfig) -> Self {
        Adam {
            learning_rate: training.learning_rate,
            beta1: training.beta1,
            beta2: training.beta2,
            epsilon: training.epsilon,
            m: ModelParams::zeros(model),
            v: ModelParams::zeros(model),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for (((p, &g), m), v) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decays must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

fn evaluate(params: &ModelParams, config: &ModelConfig, validation: &[Example]) -> (f64, Vec<Option<f64>>) {
    let accuracy = token_accuracy(params, validation);
    let correlations = latent_attribute_correlations(params, validation);
    let spearman = config
        .regularised_dims
        .iter()
        .enumerate()
        .map(|(attr, &dim)| correlations[dim][attr])
        .collect();
    (accuracy, spearman)
}

/// Trains from `init_params(model)` on the dataset's training split.
/// Each epoch shuffles the training items, steps Adam once per batch
/// (dropping a final batch smaller than two), draws fresh noise for every
/// item, and reports validation metrics to `progress`.
pub fn train(
    dataset: &Dataset,
    model: &ModelConfig,
    training: &TrainingConfig,
    mut progress: impl FnMut(&EpochReport),
) -> Result<(ModelParams, TrainReport), TrainError> {
    training.validate()?;
    let mut params = init_params(model)?;
    let mut report = TrainReport::default();
    if training.epochs == 0 {
        return Ok((params, report));
    }
    if dataset.train.len() < 2 {
        return Err(TrainError::TooFewExamples(dataset.train.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(model, training);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();

    for epoch in 1..=training.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut steps = 0usize;
        for chunk in order.chunks(training.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let noise: Vec<Vec<f64>> = (0..batch.len())
                .map(|_| (0..model.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let (parts, grads) = loss_and_gradients(&params, &batch, &noise, model)?;
            if !parts.total.is_finite() || !grads.is_finite() {
                tracing::error!(epoch, step = steps, ?parts, "non-finite loss, aborting training");
                return Err(TrainError::NonFinite { epoch, step: steps, parts });
            }
            adam.step(&mut params, &grads);
            for (s, v) in sums.iter_mut().zip([parts.total, parts.recon, parts.kl, parts.reg]) {
                *s += v;
            }
            steps += 1;
        }
        let n = steps.max(1) as f64;
        let (validation_accuracy, spearman) = evaluate(&params, model, &dataset.validation);
        let entry = EpochReport {
            epoch,
            total: sums[0] / n,
            recon: sums[1] / n,
            kl: sums[2] / n,
            reg: sums[3] / n,
            validation_accuracy,
            spearman,
        };
        tracing::debug!(epoch, total = entry.total, accuracy = validation_accuracy, "epoch done");
        progress(&entry);
        report.epochs.push(entry);
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let config = ModelConfig { encoder_hidden: 2, decoder_hidden: 2, latent_dim: 4, ..ModelConfig::default() };
        let training = TrainingConfig::default();
        let mut params = ModelParams::zeros(&config);
        let mut grads = ModelParams::zeros(&config);
        grads.dec_out_b.data[0] = 0.5;
        grads.dec_out_b.data[1] = -3.0;
        let mut adam = Adam::new(&config, &training);
        adam.step(&mut params, &grads);
        // bias-corrected first step is lr * g / (|g| + eps)
        assert!((params.dec_out_b.data[0] + 1e-3).abs() < 1e-10);
        assert!((params.dec_out_b.data[1] - 1e-3).abs() < 1e-10);
        assert_eq!(params.dec_out_b.data[2], 0.0);
    }

    #[test]
    fn config_checks() {
        let bad = TrainingConfig { batch_size: 1, ..TrainingConfig::default() };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        let bad = TrainingConfig { beta2: 1.0, ..TrainingConfig::default() };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        assert!(TrainingConfig::default().validate().is_ok());
    }
}
