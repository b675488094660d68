use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, RowWeights};
use super::mask::apply_mask;
use super::params::{init_model, EncoderVariant, ModelParams, Trainable, DEFAULT_LATENT_DIM};
use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::ndcore::{adam_step, AdamConfig, AdamState};
use crate::util::sub_seed;

pub const DEFAULT_MASK_RATE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    pub variant: EncoderVariant,
    pub mask_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: DEFAULT_LATENT_DIM,
            variant: EncoderVariant::Mlp,
            mask_rate: DEFAULT_MASK_RATE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 35,
            lr: 0.01,
            batch_size: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config(format!("{what}.epochs must be >= 1")));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("{what}.lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{what}.batch_size must be >= 1")));
        }
        Ok(())
    }
}

/// Mini-batch Adam over masked batches. Returns the per-epoch mean loss.
///
/// `weights`, when given, holds one weight per row of `data` for the term of
/// categorical feature `weights.feature`. Trainability flags on `model`
/// decide which tensors move.
pub(crate) fn fit(
    model: &mut ModelParams,
    data: &EncodedDataset,
    cfg: &TrainConfig,
    mask_rate: f64,
    weights: Option<&RowWeights>,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate("train")?;
    if data.n() == 0 {
        return Err(Error::data("training set is empty"));
    }
    model.check_schema(&data.schema)?;
    let with_encoder = model.encoder_needs_grad();
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..data.n()).collect();
    let mut shuffle_rng = crate::util::rng(sub_seed(seed, 1));
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let rows = data.subset(chunk);
            let masked = apply_mask(&rows, mask_rate, sub_seed(sub_seed(seed, 2 + epoch as u64), b as u64))?;
            let batch_weights = weights.map(|w| RowWeights {
                feature: w.feature,
                weights: chunk.iter().map(|&i| w.weights[i]).collect(),
            });
            let (loss, grads) = loss_and_grad(model, &masked, batch_weights.as_ref(), with_encoder)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::numeric(format!("epoch {epoch}, batch {b}: {m}")),
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("epoch {epoch}, batch {b}: loss is {loss}")));
            }
            adam_step(&mut model.params, &grads, &mut adam)
                .map_err(|e| Error::numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            epoch_sum += loss * chunk.len() as f64;
        }
        let mean = epoch_sum / data.n() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        history.push(mean);
    }
    Ok(history)
}

/// Stage-1 ERM pre-training of every parameter against the masked
/// reconstruction loss.
pub fn pretrain_erm(
    train: &EncodedDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    cfg.validate("stage1")?;
    if train.n() == 0 {
        return Err(Error::data("training set is empty"));
    }
    let mut model = init_model(&train.schema, model_cfg.d, model_cfg.variant, seed)?;
    model.set_trainable(Trainable::All)?;
    let history = fit(&mut model, train, cfg, model_cfg.mask_rate, None, sub_seed(seed, 0x5747_4531))?;
    Ok((model, history))
}
