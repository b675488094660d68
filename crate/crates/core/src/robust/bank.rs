use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::balanced::build_balanced_subset;
use super::error_set::build_error_set;
use super::finetune::{dfr_finetune, jtt_finetune, FinetuneConfig};
use crate::data::SplitBundle;
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta, ModelParams};
use crate::util::sub_seed;

const FORMAT: &str = "tabdro-bank/1";
pub const BANK_FILE: &str = "bank.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Jtt,
    Dfr,
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jtt" => Ok(Self::Jtt),
            "dfr" => Ok(Self::Dfr),
            other => Err(Error::config(format!("unknown strategy {other:?} (expected jtt or dfr)"))),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Jtt => "jtt",
            Self::Dfr => "dfr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Strategy {
    Jtt { upweight: f64 },
    Dfr,
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Self::Jtt { .. } => StrategyKind::Jtt,
            Self::Dfr => StrategyKind::Dfr,
        }
    }

    /// Short label, e.g. `jtt_w20` or `dfr`.
    pub fn label(&self) -> String {
        match self {
            Self::Jtt { upweight } => format!("jtt_w{upweight}"),
            Self::Dfr => "dfr".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub index: usize,
    pub name: String,
    pub dir: String,
    pub checkpoint_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_set_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_category: Option<usize>,
    pub rows_used: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub format: String,
    pub strategy: Strategy,
    pub stage2: FinetuneConfig,
    pub seed: u64,
    pub base_hash: String,
    pub schema_hash: String,
    pub features: Vec<FeatureMeta>,
}

/// The base model plus one specialized model per categorical feature.
#[derive(Debug, Clone)]
pub struct ModelBank {
    pub base: ModelParams,
    pub specialized: Vec<ModelParams>,
    pub manifest: BankManifest,
}

fn dir_name(j: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
        .collect();
    format!("{j:03}_{clean}")
}

impl ModelBank {
    pub fn k(&self) -> usize {
        self.specialized.len()
    }

    /// Fingerprint over the strategy and every member's parameters.
    pub fn hash(&self) -> String {
        let mut acc = serde_json::to_string(&self.manifest.strategy).expect("strategy serializes");
        acc.push_str(&self.base.hash());
        for m in &self.specialized {
            acc.push_str(&m.hash());
        }
        crate::util::sha256_hex(acc.as_bytes())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("features"))?;
        let meta = |seed| CheckpointMeta {
            mask_rate: self.manifest.stage2.mask_rate,
            seed,
        };
        save_checkpoint(&self.base, meta(self.manifest.seed), &dir.join("base"))?;
        for (m, f) in self.specialized.iter().zip(&self.manifest.features) {
            save_checkpoint(m, meta(f.seed), &dir.join("features").join(&f.dir))?;
        }
        crate::util::write_json(&dir.join(BANK_FILE), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BankManifest = crate::util::read_json(&dir.join(BANK_FILE))?;
        if manifest.format != FORMAT {
            return Err(Error::artifact(dir, format!("unsupported format {:?}", manifest.format)));
        }
        let (base, _) = load_checkpoint(&dir.join("base"))?;
        if base.hash() != manifest.base_hash {
            return Err(Error::artifact(dir, "base checkpoint does not match bank manifest"));
        }
        if manifest.features.len() != base.k() {
            return Err(Error::artifact(
                dir,
                format!("bank lists {} features, model has {}", manifest.features.len(), base.k()),
            ));
        }
        let mut specialized = Vec::with_capacity(base.k());
        for (j, f) in manifest.features.iter().enumerate() {
            let path = dir.join("features").join(&f.dir);
            let (m, _) = load_checkpoint(&path)?;
            if f.index != j || m.hash() != f.checkpoint_hash {
                return Err(Error::artifact(&path, "checkpoint does not match bank manifest"));
            }
            m.check_schema(&base.schema)
                .map_err(|_| Error::artifact(&path, "schema differs from base"))?;
            specialized.push(m);
        }
        Ok(Self {
            base,
            specialized,
            manifest,
        })
    }
}

/// Builds one specialized model per categorical feature of `base`.
///
/// Features are independent given the base, so they may run in parallel
/// without changing results.
pub fn robustify_all(
    base: &ModelParams,
    splits: &SplitBundle,
    strategy: Strategy,
    cfg: &FinetuneConfig,
    seed: u64,
    parallel: bool,
) -> Result<ModelBank> {
    cfg.validate()?;
    if let Strategy::Jtt { upweight } = strategy {
        if !(upweight.is_finite() && upweight >= 1.0) {
            return Err(Error::config(format!("upweight must be >= 1, got {upweight}")));
        }
    }
    let names = base.schema.categorical_names();
    let one = |j: usize| -> Result<(ModelParams, FeatureMeta)> {
        let fseed = sub_seed(seed, j as u64);
        let (model, history, error_set_size, per_category, rows_used) = match strategy {
            Strategy::Jtt { upweight } => {
                let eset = build_error_set(base, &splits.train, j)?;
                log::info!("feature {}: error set {} of {}", names[j], eset.len(), splits.train.n());
                let (m, h) = jtt_finetune(base, &splits.train, &eset, upweight, cfg, fseed)?;
                (m, h, Some(eset.len()), None, splits.train.n())
            }
            Strategy::Dfr => {
                let subset = build_balanced_subset(&splits.val, j, sub_seed(fseed, 7))?;
                let rows = splits.val.select_ids(&subset.row_ids)?;
                log::info!(
                    "feature {}: balanced subset {} rows ({} per category)",
                    names[j],
                    rows.n(),
                    subset.per_category
                );
                let (m, h) = dfr_finetune(base, &rows, j, cfg, fseed)?;
                (m, h, None, Some(subset.per_category), rows.n())
            }
        };
        let meta = FeatureMeta {
            index: j,
            name: names[j].to_string(),
            dir: dir_name(j, names[j]),
            checkpoint_hash: model.hash(),
            seed: fseed,
            error_set_size,
            per_category,
            rows_used,
            final_loss: history.last().copied().unwrap_or(f64::NAN),
        };
        Ok((model, meta))
    };
    let results: Vec<Result<(ModelParams, FeatureMeta)>> = if parallel {
        (0..base.k()).into_par_iter().map(one).collect()
    } else {
        (0..base.k()).map(one).collect()
    };
    let mut specialized = Vec::with_capacity(base.k());
    let mut features = Vec::with_capacity(base.k());
    for r in results {
        let (m, f) = r?;
        specialized.push(m);
        features.push(f);
    }
    Ok(ModelBank {
        base: base.clone(),
        specialized,
        manifest: BankManifest {
            format: FORMAT.into(),
            strategy,
            stage2: *cfg,
            seed,
            base_hash: base.hash(),
            schema_hash: base.schema.hash(),
            features,
        },
    })
}
