use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::routing::{represent, Representations, RoutingLoss};
use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::model::{forward_latent, LatentBatch, ModelParams};
use crate::ndcore::{adam_step, dot, AdamConfig, AdamState, GradSet, ParamSet, ParamTensor};
use crate::robust::ModelBank;
use crate::util::sub_seed;

const FORMAT: &str = "tabdro-classifier/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationMode {
    Base,
    Bank,
}

impl fmt::Display for RepresentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Base => "base",
            Self::Bank => "bank",
        })
    }
}

/// Where representations come from: base latents (ERM baseline) or routed
/// latents from a model bank.
#[derive(Debug, Clone, Copy)]
pub enum Backbone<'a> {
    Base(&'a ModelParams),
    Bank { bank: &'a ModelBank, routing: RoutingLoss },
}

impl Backbone<'_> {
    pub fn mode(&self) -> RepresentationMode {
        match self {
            Self::Base(_) => RepresentationMode::Base,
            Self::Bank { .. } => RepresentationMode::Bank,
        }
    }

    pub fn hash(&self) -> String {
        match self {
            Self::Base(m) => m.hash(),
            Self::Bank { bank, .. } => bank.hash(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Self::Base(m) => m.d,
            Self::Bank { bank, .. } => bank.base.d,
        }
    }

    fn routing(&self) -> Option<RoutingLoss> {
        match self {
            Self::Base(_) => None,
            Self::Bank { routing, .. } => Some(*routing),
        }
    }

    pub fn represent(&self, ds: &EncodedDataset) -> Result<Representations> {
        match self {
            Self::Base(m) => Ok(Representations {
                latents: forward_latent(m, ds)?,
                j_star: Vec::new(),
            }),
            Self::Bank { bank, routing } => represent(bank, ds, *routing),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            batch_size: 256,
            threshold: 0.5,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        crate::model::TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
        }
        .validate("classifier")?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!(
                "classifier.threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Binary logistic output over a frozen representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub format: String,
    pub mode: RepresentationMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub routing: Option<RoutingLoss>,
    /// Hash of the base model (base mode) or of the bank (bank mode).
    pub backbone_hash: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub config: ClassifierConfig,
    pub seed: u64,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log σ(x)` for `y = 1`, `-log(1 - σ(x))` for `y = 0`.
fn bce(x: f64, y: u8) -> f64 {
    let m = if y == 1 { -x } else { x };
    // softplus(m)
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

impl Classifier {
    pub fn score(&self, z: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, z) + self.bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = crate::util::read_json(path)?;
        if c.format != FORMAT {
            return Err(Error::artifact(path, format!("unsupported format {:?}", c.format)));
        }
        if c.weights.iter().any(|w| !w.is_finite()) || !c.bias.is_finite() {
            return Err(Error::artifact(path, "non-finite classifier parameters"));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss_history: Vec<f64>,
}

/// Zero-initialised logistic regression fit with mini-batch Adam.
pub fn train_logistic(latents: &LatentBatch, labels: &[u8], cfg: &ClassifierConfig, seed: u64) -> Result<LogisticFit> {
    cfg.validate()?;
    let (n, d) = (latents.n(), latents.d);
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} representations", labels.len())));
    }
    if n == 0 {
        return Err(Error::data("no training rows for the classifier"));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == n {
        return Err(Error::data("classifier training labels contain a single class"));
    }
    let mut params = ParamSet::new(vec![
        ParamTensor::zeros("clf.w", vec![d]),
        ParamTensor::zeros("clf.b", vec![1]),
    ]);
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::util::rng(sub_seed(seed, 1));
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            grads.zero();
            let inv = 1.0 / chunk.len() as f64;
            let (w, b) = (&params.tensors[0].values, params.tensors[1].values[0]);
            let GradSet { values } = &mut grads;
            let (gw, gb) = values.split_at_mut(1);
            for &i in chunk {
                let z = latents.row(i);
                let x = dot(w, z) + b;
                epoch_sum += bce(x, labels[i]);
                let r = (sigmoid(x) - f64::from(labels[i])) * inv;
                for (g, zi) in gw[0].iter_mut().zip(z) {
                    *g += r * zi;
                }
                gb[0][0] += r;
            }
            adam_step(&mut params, &grads, &mut adam)
                .map_err(|e| Error::numeric(format!("classifier epoch {epoch}: {e}")))?;
        }
        let mean = epoch_sum / n as f64;
        if !mean.is_finite() {
            return Err(Error::numeric(format!("classifier epoch {epoch}: loss is {mean}")));
        }
        history.push(mean);
    }
    Ok(LogisticFit {
        weights: params.tensors[0].values.clone(),
        bias: params.tensors[1].values[0],
        loss_history: history,
    })
}

/// Trains the downstream classifier on frozen representations of `train`.
pub fn train_classifier(
    backbone: Backbone<'_>,
    train: &EncodedDataset,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Classifier> {
    cfg.validate()?;
    let reps = backbone.represent(train)?;
    let fit = train_logistic(&reps.latents, &train.labels, cfg, seed)?;
    Ok(Classifier {
        format: FORMAT.into(),
        mode: backbone.mode(),
        routing: backbone.routing(),
        backbone_hash: backbone.hash(),
        weights: fit.weights,
        bias: fit.bias,
        threshold: cfg.threshold,
        config: *cfg,
        seed,
        loss_history: fit.loss_history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub row_ids: Vec<u64>,
    /// Empty in base mode.
    pub j_star: Vec<Option<usize>>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Predictions {
    pub fn n(&self) -> usize {
        self.row_ids.len()
    }

    /// `row_id,j_star,score,label`; `j_star` is the 0-based categorical
    /// feature index, blank in base mode.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row_id", "j_star", "score", "label"])?;
        for i in 0..self.n() {
            let j = match self.j_star.get(i).copied().flatten() {
                Some(j) => j.to_string(),
                None => String::new(),
            };
            w.write_record([
                self.row_ids[i].to_string(),
                j,
                self.scores[i].to_string(),
                self.labels[i].to_string(),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, &self.to_csv_bytes()?)
    }
}

pub fn predict(backbone: Backbone<'_>, clf: &Classifier, ds: &EncodedDataset) -> Result<Predictions> {
    if clf.mode != backbone.mode() {
        return Err(Error::config(format!(
            "classifier was trained on {} representations but a {} backbone was given",
            clf.mode,
            backbone.mode()
        )));
    }
    if clf.backbone_hash != backbone.hash() {
        return Err(Error::config(format!(
            "classifier was trained against a different {} than the one given",
            if clf.mode == RepresentationMode::Bank { "model bank" } else { "base model" }
        )));
    }
    if clf.routing != backbone.routing() {
        return Err(Error::config("classifier was trained with a different routing rule"));
    }
    if clf.weights.len() != backbone.d() {
        return Err(Error::shape(format!(
            "classifier has {} weights, representation has {} dimensions",
            clf.weights.len(),
            backbone.d()
        )));
    }
    let reps = backbone.represent(ds)?;
    let scores: Vec<f64> = (0..ds.n()).map(|i| clf.score(reps.latents.row(i))).collect();
    let labels = scores.iter().map(|&s| u8::from(s >= clf.threshold)).collect();
    Ok(Predictions {
        row_ids: ds.row_ids.clone(),
        j_star: reps.j_star,
        scores,
        labels,
    })
}
