use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::error_set::ErrorSet;
use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::model::{fit, ModelParams, RowWeights, TrainConfig, Trainable};

/// Stage-2 optimisation settings. Each fine-tune starts a fresh Adam state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Masking rate applied during fine-tuning, normally the stage-1 rate.
    pub mask_rate: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.01,
            batch_size: 1024,
            mask_rate: crate::model::DEFAULT_MASK_RATE,
        }
    }
}

impl FinetuneConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate("stage2")?;
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(Error::config(format!(
                "stage2.mask_rate must lie in [0, 1), got {}",
                self.mask_rate
            )));
        }
        Ok(())
    }
}

/// Per-row weights for the feature-`j` term: `w` on error-set rows, 1 elsewhere.
pub fn jtt_weights(train: &EncodedDataset, eset: &ErrorSet, w: f64) -> Result<RowWeights> {
    if !(w.is_finite() && w >= 1.0) {
        return Err(Error::config(format!("upweight must be >= 1, got {w}")));
    }
    let ids: HashSet<u64> = eset.row_ids.iter().copied().collect();
    let weights: Vec<f64> = train
        .row_ids
        .iter()
        .map(|id| if ids.contains(id) { w } else { 1.0 })
        .collect();
    let hits = weights.iter().filter(|&&x| x != 1.0).count();
    if w != 1.0 && hits != ids.len() {
        return Err(Error::data(format!(
            "error set holds {} ids but only {hits} are in the training split",
            ids.len()
        )));
    }
    Ok(RowWeights {
        feature: eset.feature,
        weights,
    })
}

/// Fine-tunes encoder and head `j` on `train` with the error set upweighted.
pub fn jtt_finetune(
    base: &ModelParams,
    train: &EncodedDataset,
    eset: &ErrorSet,
    w: f64,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    cfg.validate()?;
    let weights = jtt_weights(train, eset, w)?;
    if eset.is_empty() {
        log::warn!("feature {}: error set is empty, fine-tuning is plain ERM", eset.feature);
    }
    let mut model = base.clone();
    model.set_trainable(Trainable::EncoderAndHead(eset.feature))?;
    let history = fit(&mut model, train, &cfg.train_config(), cfg.mask_rate, Some(&weights), seed)?;
    Ok((model, history))
}

/// Retrains head `j` alone on a balanced subset; every other tensor keeps its
/// exact base value.
pub fn dfr_finetune(
    base: &ModelParams,
    subset: &EncodedDataset,
    j: usize,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    cfg.validate()?;
    let mut model = base.clone();
    model.set_trainable(Trainable::HeadOnly(j))?;
    let history = fit(&mut model, subset, &cfg.train_config(), cfg.mask_rate, None, seed)?;
    Ok((model, history))
}
