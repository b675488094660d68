use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::table::RawTable;
use crate::error::{Error, Result};

/// Distinct-value count above which an all-numeric column becomes continuous.
pub const DEFAULT_MAX_CARD: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical { cardinality: usize, vocabulary: Vec<String> },
    Continuous { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    /// Number of categories, or `None` for continuous features.
    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            FeatureKind::Categorical { cardinality, .. } => Some(*cardinality),
            FeatureKind::Continuous { .. } => None,
        }
    }
}

/// Ordered feature list plus a binary target.
///
/// Categorical features are addressed by their position among categorical
/// features (`0..k`), continuous ones by their position among continuous
/// features (`0..c`). Schema order is preserved for the CSV header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub target_name: String,
    /// `[negative, positive]` raw target values.
    pub target_values: [String; 2],
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::data(format!("duplicate feature name {:?}", f.name)));
            }
            if f.name == self.target_name {
                return Err(Error::data(format!("feature {:?} shadows the target", f.name)));
            }
            match &f.kind {
                FeatureKind::Categorical {
                    cardinality,
                    vocabulary,
                } => {
                    if *cardinality < 2 || *cardinality != vocabulary.len() {
                        return Err(Error::data(format!(
                            "feature {:?}: cardinality {} with {} vocabulary entries",
                            f.name,
                            cardinality,
                            vocabulary.len()
                        )));
                    }
                    let uniq: HashSet<_> = vocabulary.iter().collect();
                    if uniq.len() != vocabulary.len() {
                        return Err(Error::data(format!(
                            "feature {:?}: duplicate vocabulary entries",
                            f.name
                        )));
                    }
                }
                FeatureKind::Continuous { mean, std } => {
                    if !(mean.is_finite() && std.is_finite() && *std > 0.0) {
                        return Err(Error::data(format!(
                            "feature {:?}: invalid standardization ({mean}, {std})",
                            f.name
                        )));
                    }
                }
            }
        }
        if self.k() == 0 {
            return Err(Error::data("schema needs at least one categorical feature"));
        }
        if self.target_values[0] == self.target_values[1] {
            return Err(Error::data("target values must differ"));
        }
        Ok(())
    }

    /// Number of categorical features.
    pub fn k(&self) -> usize {
        self.features.iter().filter(|f| f.is_categorical()).count()
    }

    /// Number of continuous features.
    pub fn c(&self) -> usize {
        self.features.len() - self.k()
    }

    pub fn categorical(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features.iter().filter(|f| f.is_categorical())
    }

    pub fn continuous(&self) -> impl Iterator<Item = &FeatureSpec> {
        self.features.iter().filter(|f| !f.is_categorical())
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.categorical().filter_map(|f| f.cardinality()).collect()
    }

    pub fn categorical_names(&self) -> Vec<&str> {
        self.categorical().map(|f| f.name.as_str()).collect()
    }

    pub fn categorical_index(&self, name: &str) -> Option<usize> {
        self.categorical().position(|f| f.name == name)
    }

    pub fn vocabulary(&self, j: usize) -> Option<&[String]> {
        match &self.categorical().nth(j)?.kind {
            FeatureKind::Categorical { vocabulary, .. } => Some(vocabulary),
            _ => None,
        }
    }

    /// Standardization stats of the `l`-th continuous feature.
    pub fn moments(&self, l: usize) -> Option<(f64, f64)> {
        match self.continuous().nth(l)?.kind {
            FeatureKind::Continuous { mean, std } => Some((mean, std)),
            _ => None,
        }
    }

    /// Stable content hash over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        crate::util::sha256_hex(&bytes)
    }

    /// Refits continuous means and deviations on the given table rows, so
    /// standardization uses training statistics only.
    pub fn fit_moments(&mut self, table: &RawTable, rows: &[u64]) -> Result<()> {
        for f in self.features.iter_mut() {
            let FeatureKind::Continuous { mean, std } = &mut f.kind else {
                continue;
            };
            let idx = table
                .column_index(&f.name)
                .ok_or_else(|| Error::data(format!("column {:?} not found", f.name)))?;
            let mut xs = Vec::with_capacity(rows.len());
            for &r in rows {
                let raw = table
                    .rows
                    .get(r as usize)
                    .ok_or_else(|| Error::data(format!("row {r} out of range")))?[idx]
                    .as_str();
                xs.push(
                    raw.parse::<f64>()
                        .map_err(|_| Error::data(format!("column {:?}: non-numeric value {raw:?}", f.name)))?,
                );
            }
            let (m, s) = moments(&xs);
            if !(s > 0.0) {
                return Err(Error::data(format!("column {:?} is constant on the training rows", f.name)));
            }
            (*mean, *std) = (m, s);
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::util::write_json(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s: Schema = crate::util::read_json(path)?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindHint {
    Categorical,
    Continuous,
    Ignore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InferOptions {
    pub max_card: usize,
    pub overrides: BTreeMap<String, KindHint>,
    /// Raw target value mapped to label 1. Defaults to the lexicographically
    /// larger of the two values ("yes" over "no", "1" over "0", ">50K" over "<=50K").
    pub positive_value: Option<String>,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            max_card: DEFAULT_MAX_CARD,
            overrides: BTreeMap::new(),
            positive_value: None,
        }
    }
}

/// Classifies every non-target column and fits vocabularies and moments.
pub fn infer_schema(table: &RawTable, target_name: &str, opts: &InferOptions) -> Result<Schema> {
    if table.n_rows() == 0 {
        return Err(Error::data("empty table"));
    }
    let target_idx = table
        .column_index(target_name)
        .ok_or_else(|| Error::data(format!("target column {target_name:?} not found")))?;
    for name in opts.overrides.keys() {
        if table.column_index(name).is_none() {
            return Err(Error::config(format!("override names unknown column {name:?}")));
        }
    }

    let target_vocab = first_appearance(table.column(target_idx));
    if target_vocab.len() != 2 {
        return Err(Error::data(format!(
            "target {target_name:?} must have exactly two distinct values, found {}",
            target_vocab.len()
        )));
    }
    let positive = match &opts.positive_value {
        Some(p) if target_vocab.contains(p) => p.clone(),
        Some(p) => return Err(Error::config(format!("positive value {p:?} not in target"))),
        None => target_vocab.iter().max().cloned().expect("two values"),
    };
    let negative = target_vocab
        .iter()
        .find(|v| **v != positive)
        .cloned()
        .expect("two values");

    let mut features = Vec::new();
    for (idx, name) in table.header.iter().enumerate() {
        if idx == target_idx {
            continue;
        }
        let hint = opts.overrides.get(name).copied();
        if hint == Some(KindHint::Ignore) {
            continue;
        }
        if let Some(row) = table.column(idx).position(str::is_empty) {
            return Err(Error::data(format!("missing value in column {name:?} at row {row}")));
        }
        let vocab = first_appearance(table.column(idx));
        if vocab.len() < 2 {
            return Err(Error::data(format!(
                "column {name:?} has a single distinct value"
            )));
        }
        let numeric: Option<Vec<f64>> = table.column(idx).map(|v| v.parse::<f64>().ok()).collect();
        let continuous = match hint {
            Some(KindHint::Continuous) => {
                if numeric.is_none() {
                    return Err(Error::data(format!(
                        "column {name:?} forced continuous but holds non-numeric values"
                    )));
                }
                true
            }
            Some(KindHint::Categorical) => false,
            _ => numeric.is_some() && vocab.len() > opts.max_card,
        };
        let kind = if continuous {
            let xs = numeric.expect("checked numeric");
            let (mean, std) = moments(&xs);
            if !(std > 0.0) {
                return Err(Error::data(format!("column {name:?} is constant")));
            }
            FeatureKind::Continuous { mean, std }
        } else {
            FeatureKind::Categorical {
                cardinality: vocab.len(),
                vocabulary: vocab,
            }
        };
        features.push(FeatureSpec {
            name: name.clone(),
            kind,
        });
    }

    let schema = Schema {
        features,
        target_name: target_name.to_string(),
        target_values: [negative, positive],
    };
    schema.validate()?;
    Ok(schema)
}

fn first_appearance<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen: HashMap<&str, ()> = HashMap::new();
    let mut out = Vec::new();
    for v in values {
        if seen.insert(v, ()).is_none() {
            out.push(v.to_string());
        }
    }
    out
}

/// Mean and population standard deviation, summed in row order.
pub(crate) fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
