use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{KindHint, SynthSpec, UnknownPolicy};
use crate::ensemble::{ClassifierConfig, RoutingLoss};
use crate::error::{Error, Result};
use crate::eval::ReportFormat;
use crate::model::{ModelConfig, TrainConfig};
use crate::robust::{FinetuneConfig, StrategyKind};

/// Environment variable that replaces the default seed.
pub const SEED_ENV: &str = "TABDRO_SEED";
pub const DEFAULT_SEED: u64 = 43;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSource {
    pub path: Option<PathBuf>,
    pub target: Option<String>,
    pub delimiter: String,
    /// Keep only the first `max_rows` data rows.
    pub max_rows: Option<usize>,
    pub max_card: usize,
    pub kinds: BTreeMap<String, KindHint>,
    pub positive: Option<String>,
    pub unknown: UnknownPolicy,
}

impl Default for CsvSource {
    fn default() -> Self {
        Self {
            path: None,
            target: None,
            delimiter: ",".into(),
            max_rows: None,
            max_card: 64,
            kinds: BTreeMap::new(),
            positive: None,
            unknown: UnknownPolicy::Strict,
        }
    }
}

impl CsvSource {
    pub fn delimiter_byte(&self) -> Result<u8> {
        match self.delimiter.as_str() {
            "\\t" | "tab" => Ok(b'\t'),
            d if d.len() == 1 && d.is_ascii() => Ok(d.as_bytes()[0]),
            d => Err(Error::config(format!("data.csv.delimiter must be one ASCII character, got {d:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    pub csv: CsvSource,
    pub synth: SynthSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            csv: CsvSource::default(),
            synth: SynthSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.7, 0.15, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub strategies: Vec<StrategyKind>,
    /// JTT upweight grid; each value yields its own bank.
    pub upweights: Vec<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fine-tune features on a thread pool.
    pub parallel: bool,
    pub routing: RoutingLoss,
}

impl Default for Stage2Config {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        Self {
            strategies: vec![StrategyKind::Jtt, StrategyKind::Dfr],
            upweights: vec![20.0],
            epochs: f.epochs,
            lr: f.lr,
            batch_size: f.batch_size,
            parallel: true,
            routing: RoutingLoss::Base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub delta: f64,
    pub min_support: usize,
    pub formats: Vec<ReportFormat>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            min_support: 30,
            formats: vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub stage1: TrainConfig,
    pub stage2: Stage2Config,
    pub classifier: ClassifierConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            out_dir: PathBuf::from("tabdro-run"),
            data: DataConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            stage1: TrainConfig::default(),
            stage2: Stage2Config::default(),
            classifier: ClassifierConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn finetune(&self) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.stage2.epochs,
            lr: self.stage2.lr,
            batch_size: self.stage2.batch_size,
            mask_rate: self.model.mask_rate,
        }
    }

    /// Rejects out-of-range values before any work starts.
    pub fn validate(&self) -> Result<()> {
        match self.data.source {
            SourceKind::Synthetic => self.data.synth.validate()?,
            SourceKind::Csv => {
                if self.data.csv.path.is_none() {
                    return Err(Error::config("data.csv.path is required when data.source is csv"));
                }
                if self.data.csv.target.is_none() {
                    return Err(Error::config("data.csv.target is required when data.source is csv"));
                }
                self.data.csv.delimiter_byte()?;
                if self.data.csv.max_card < 2 {
                    return Err(Error::config("data.csv.max_card must be >= 2"));
                }
                if self.data.csv.max_rows == Some(0) {
                    return Err(Error::config("data.csv.max_rows must be >= 1"));
                }
            }
        }
        let r = self.split.ratios;
        if r.iter().any(|&x| !(x > 0.0 && x < 1.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split.ratios must be three positive values summing to 1, got {r:?}"
            )));
        }
        if self.model.d < 2 {
            return Err(Error::config(format!("model.d must be >= 2, got {}", self.model.d)));
        }
        if !(0.0..1.0).contains(&self.model.mask_rate) {
            return Err(Error::config(format!(
                "model.mask_rate must lie in [0, 1), got {}",
                self.model.mask_rate
            )));
        }
        self.stage1.validate("stage1")?;
        self.finetune().validate()?;
        if self.stage2.strategies.contains(&StrategyKind::Jtt) {
            if self.stage2.upweights.is_empty() {
                return Err(Error::config("stage2.upweights must not be empty when jtt is enabled"));
            }
            for &w in &self.stage2.upweights {
                if !(w.is_finite() && w >= 1.0) {
                    return Err(Error::config(format!("stage2.upweights values must be >= 1, got {w}")));
                }
            }
        }
        self.classifier.validate()?;
        if !(self.eval.delta.is_finite() && self.eval.delta >= 0.0) {
            return Err(Error::config(format!("eval.delta must be >= 0, got {}", self.eval.delta)));
        }
        if self.eval.min_support == 0 {
            return Err(Error::config("eval.min_support must be >= 1"));
        }
        Ok(())
    }

    /// Defaults, then the seed environment variable, then `file`, then
    /// command-line overrides, then validation.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?;
            value["seed"] = Value::from(seed);
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("config {} is not valid JSON: {e}", path.display())))?;
            merge(&mut value, doc, "")?;
        }
        Self::finish(value, overrides)
    }

    /// Like [`PipelineConfig::resolve`] with the file contents given as text.
    pub fn from_json(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        let doc: Value =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config is not valid JSON: {e}")))?;
        merge(&mut value, doc, "")?;
        Self::finish(value, overrides)
    }

    fn finish(mut value: Value, overrides: &[(String, String)]) -> Result<Self> {
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut Value, doc: Value, prefix: &str) -> Result<()> {
    match (base, doc) {
        (Value::Object(b), Value::Object(d)) => {
            for (k, v) in d {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get_mut(&k) {
                    // maps such as data.csv.kinds take arbitrary keys
                    Some(slot) if slot.is_object() && v.is_object() && !path.ends_with("kinds") => {
                        merge(slot, v, &path)?
                    }
                    Some(slot) => *slot = v,
                    None => return Err(Error::config(format!("unknown config field {path:?}"))),
                }
            }
            Ok(())
        }
        (b, d) => {
            *b = d;
            Ok(())
        }
    }
}

/// Optional text fields whose default is null.
const TEXT_FIELDS: [&str; 4] = ["data.csv.path", "data.csv.target", "data.csv.positive", "out_dir"];

/// Sets one dotted field. The raw text is read as JSON when it parses and
/// the slot is not a string; otherwise as a string. Comma lists are
/// accepted for array fields.
pub fn apply_override(value: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut slot = &mut *value;
    let mut walked = Vec::new();
    for part in key.split('.') {
        walked.push(part);
        let in_kinds = walked.len() >= 2 && walked[walked.len() - 2] == "kinds";
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("config field {:?} has no sub-fields", walked[..walked.len() - 1].join("."))))?;
        if !obj.contains_key(part) {
            if in_kinds {
                obj.insert(part.to_string(), Value::Null);
            } else {
                return Err(Error::config(format!("unknown config field {key:?}")));
            }
        }
        slot = obj.get_mut(part).expect("present");
    }
    let parsed = match slot {
        _ if TEXT_FIELDS.contains(&key) => Value::String(raw.to_string()),
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(_) if !raw.trim_start().starts_with('[') => Value::Array(
            raw.split(',')
                .map(|p| serde_json::from_str(p.trim()).unwrap_or_else(|_| Value::String(p.trim().to_string())))
                .collect(),
        ),
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    };
    *slot = parsed;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn defaults_match_reference_setup() {
        let c = PipelineConfig::default();
        assert_eq!(c.seed, 43);
        assert_eq!(c.model.d, 192);
        assert_eq!((c.stage1.epochs, c.stage1.lr, c.stage1.batch_size), (35, 0.01, 1024));
        assert_eq!(c.stage2.epochs, 10);
        assert_eq!(c.classifier.epochs, 100);
        assert_eq!(c.stage2.upweights, vec![20.0]);
        c.validate().unwrap();
    }

    #[test]
    fn overrides_and_file_layering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"stage1": {"epochs": 3}, "model": {"d": 16}}"#).unwrap();
        let c = PipelineConfig::resolve(
            Some(&path),
            &ov(&[
                ("stage1.epochs", "5"),
                ("stage2.upweights", "20,50"),
                ("stage2.strategies", "dfr"),
                ("model.variant", "attn-lite"),
                ("out_dir", "123"),
                ("data.csv.target", "7"),
                ("data.csv.kinds.age", "categorical"),
            ]),
        )
        .unwrap();
        assert_eq!(c.stage1.epochs, 5);
        assert_eq!(c.model.d, 16);
        assert_eq!(c.stage2.upweights, vec![20.0, 50.0]);
        assert_eq!(c.stage2.strategies, vec![StrategyKind::Dfr]);
        assert_eq!(c.out_dir, PathBuf::from("123"));
        assert_eq!(c.data.csv.target.as_deref(), Some("7"));
        assert_eq!(c.data.csv.kinds["age"], KindHint::Categorical);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for (k, v) in [
            ("data.synth.bias", "1.2"),
            ("stage1.epochs", "0"),
            ("model.mask_rate", "1.0"),
            ("stage2.upweights", "0.5"),
            ("stage2.strategies", "groupdro"),
            ("nonsense.field", "1"),
            ("stage1.epochs.x", "1"),
            ("split.ratios", "0.5,0.5,0.5"),
        ] {
            let e = PipelineConfig::resolve(None, &ov(&[(k, v)])).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{k}: {e}");
        }
        let e = PipelineConfig::resolve(None, &ov(&[("data.synth.bias", "1.2")])).unwrap_err();
        assert!(e.to_string().contains("synth.bias"), "{e}");
    }

    #[test]
    fn unknown_file_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"stage1": {"epoch": 3}}"#).unwrap();
        assert_eq!(PipelineConfig::resolve(Some(&path), &[]).unwrap_err().exit_code(), 2);
        std::fs::write(&path, "{").unwrap();
        assert_eq!(PipelineConfig::resolve(Some(&path), &[]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn csv_source_needs_path_and_target() {
        let e = PipelineConfig::resolve(None, &ov(&[("data.source", "csv")])).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let c = PipelineConfig::resolve(
            None,
            &ov(&[
                ("data.source", "csv"),
                ("data.csv.path", "x.csv"),
                ("data.csv.target", "y"),
                ("data.csv.delimiter", ";"),
            ]),
        )
        .unwrap();
        assert_eq!(c.data.csv.delimiter_byte().unwrap(), b';');
    }
}
